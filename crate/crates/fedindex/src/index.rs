//! The shared linear index, producer datasets, and the empirical risk each
//! producer attaches to a candidate index.
//!
//! A candidate index maps a covariate vector `y` to `z = a . y` (plus an
//! optional fixed intercept). Producer `i` turns the index into a mean via
//! its private link `mu = max(z, floor)^p` and scores it with the scaled
//! deviance averaged over its observations. The floor keeps the power link
//! defined for nonpositive index values; below it the response is flat, so
//! that region contributes zero gradient.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec;
use crate::tweedie::{self, TweedieParams};

/// Identifier of a producer (client) in a population.
pub type ProducerId = u64;

/// Default clamp applied to the index value before the power link.
pub const DEFAULT_INDEX_FLOOR: f64 = 1e-6;

/// The shared index coefficients: one sensitivity per covariate, plus an
/// optional intercept that is carried but never trained.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IndexCoefficients {
    sensitivities: Vec<f64>,
    intercept: Option<f64>,
}

impl IndexCoefficients {
    pub fn new(sensitivities: Vec<f64>) -> Result<Self> {
        Self::build(sensitivities, None)
    }

    pub fn with_intercept(sensitivities: Vec<f64>, intercept: f64) -> Result<Self> {
        Self::build(sensitivities, Some(intercept))
    }

    /// `(c, ..., c)` with `dim` entries and no intercept.
    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::build(vec![value; dim], None)
    }

    fn build(sensitivities: Vec<f64>, intercept: Option<f64>) -> Result<Self> {
        if sensitivities.is_empty() {
            return Err(Error::invalid(
                "sensitivities",
                "must have at least one entry",
            ));
        }
        if sensitivities.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid(
                "sensitivities",
                "all entries must be finite",
            ));
        }
        if let Some(b) = intercept {
            if !b.is_finite() {
                return Err(Error::invalid("intercept", "must be finite"));
            }
        }
        Ok(Self {
            sensitivities,
            intercept,
        })
    }

    pub fn dim(&self) -> usize {
        self.sensitivities.len()
    }

    pub fn sensitivities(&self) -> &[f64] {
        &self.sensitivities
    }

    pub fn intercept(&self) -> Option<f64> {
        self.intercept
    }

    /// In-place `a <- a + scale * direction` on the sensitivities.
    pub(crate) fn add_scaled(&mut self, scale: f64, direction: &[f64]) {
        for (a, d) in self.sensitivities.iter_mut().zip(direction) {
            *a += scale * d;
        }
    }

    pub(crate) fn sensitivities_mut(&mut self) -> &mut [f64] {
        &mut self.sensitivities
    }
}

/// One day of data: a realized nonnegative loss and the covariate vector
/// observed alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub loss: f64,
    pub covariates: Vec<f64>,
}

/// One producer's private dataset together with its dispersion triple and
/// aggregation weight (capacity).
#[derive(Debug, Clone, PartialEq)]
pub struct ProducerDataset {
    id: ProducerId,
    observations: Vec<Observation>,
    params: TweedieParams,
    weight: f64,
}

impl ProducerDataset {
    pub fn new(
        id: ProducerId,
        observations: Vec<Observation>,
        params: TweedieParams,
        weight: f64,
    ) -> Result<Self> {
        let first = observations
            .first()
            .ok_or(Error::Empty("observation list"))?;
        let dim = first.covariates.len();
        if dim == 0 {
            return Err(Error::invalid(
                "observations",
                "covariate vectors must be nonempty",
            ));
        }
        for obs in &observations {
            if obs.covariates.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: obs.covariates.len(),
                });
            }
            if !obs.loss.is_finite() || obs.loss < 0.0 {
                return Err(Error::invalid(
                    "observations",
                    format!("losses must be nonnegative finite reals, got {}", obs.loss),
                ));
            }
            if obs.covariates.iter().any(|y| !y.is_finite()) {
                return Err(Error::invalid("observations", "covariates must be finite"));
            }
        }
        if !weight.is_finite() || weight <= 0.0 {
            return Err(Error::invalid(
                "weight",
                format!("must be a positive finite real, got {weight}"),
            ));
        }
        Ok(Self {
            id,
            observations,
            params,
            weight,
        })
    }

    pub fn id(&self) -> ProducerId {
        self.id
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn params(&self) -> &TweedieParams {
        &self.params
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Covariate dimension shared by every observation.
    pub fn dim(&self) -> usize {
        self.observations[0].covariates.len()
    }
}

fn check_dim(coeffs: &IndexCoefficients, len: usize) -> Result<()> {
    if coeffs.dim() != len {
        return Err(Error::DimensionMismatch {
            expected: coeffs.dim(),
            actual: len,
        });
    }
    Ok(())
}

fn check_floor(floor: f64) -> Result<()> {
    if !floor.is_finite() || floor <= 0.0 {
        return Err(Error::invalid(
            "floor",
            format!("must be a positive finite real, got {floor}"),
        ));
    }
    Ok(())
}

/// Index value `z = a . y` plus the intercept when present.
pub fn index_value(coeffs: &IndexCoefficients, covariates: &[f64]) -> Result<f64> {
    check_dim(coeffs, covariates.len())?;
    let mut z = coeffs.intercept.unwrap_or(0.0);
    for (a, y) in coeffs.sensitivities.iter().zip(covariates) {
        z += a * y;
    }
    Ok(z)
}

pub(crate) fn clamped_power(z: f64, p: f64, floor: f64) -> f64 {
    let base = z.max(floor);
    if p == 1.0 {
        base
    } else {
        base.powf(p)
    }
}

/// Mean response `max(z, floor)^p`; strictly positive for `floor > 0`.
pub fn mean_response(
    coeffs: &IndexCoefficients,
    covariates: &[f64],
    p: f64,
    floor: f64,
) -> Result<f64> {
    check_floor(floor)?;
    let z = index_value(coeffs, covariates)?;
    Ok(clamped_power(z, p, floor))
}

/// Local empirical risk: scaled deviance averaged over the dataset.
pub fn local_risk(coeffs: &IndexCoefficients, data: &ProducerDataset, floor: f64) -> Result<f64> {
    check_floor(floor)?;
    check_dim(coeffs, data.dim())?;
    let p = data.params().p();
    let mut total = 0.0;
    for obs in data.observations() {
        let z = index_value(coeffs, &obs.covariates)?;
        let mu = clamped_power(z, p, floor);
        total += tweedie::scaled_deviance(obs.loss, mu, data.params())?;
    }
    Ok(total / data.observations().len() as f64)
}

/// Gradient of the batch-averaged local risk with respect to the
/// sensitivities. Observations whose index value sits at or below the floor
/// are in the flat clamp region and contribute nothing.
pub fn local_risk_gradient<'a, I>(
    coeffs: &IndexCoefficients,
    batch: I,
    params: &TweedieParams,
    floor: f64,
) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a Observation>,
{
    check_floor(floor)?;
    let p = params.p();
    let mut grad = vec![0.0; coeffs.dim()];
    let mut count = 0usize;
    for obs in batch {
        count += 1;
        let z = index_value(coeffs, &obs.covariates)?;
        if z <= floor {
            continue;
        }
        let mu = if p == 1.0 { z } else { z.powf(p) };
        let dloss_dmu = tweedie::deviance_dmu(obs.loss, mu, params)?;
        let chain = if p == 1.0 {
            dloss_dmu
        } else {
            dloss_dmu * p * z.powf(p - 1.0)
        };
        for (g, y) in grad.iter_mut().zip(&obs.covariates) {
            *g += chain * y;
        }
    }
    if count == 0 {
        return Err(Error::Empty("gradient batch"));
    }
    let inv = 1.0 / count as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok(grad)
}

/// `local_risk_gradient` plus the proximal pull `beta * (a - anchor)`.
/// With `beta = 0` the result is bit-identical to the plain gradient.
pub fn prox_local_risk_gradient<'a, I>(
    coeffs: &IndexCoefficients,
    batch: I,
    params: &TweedieParams,
    anchor: &IndexCoefficients,
    beta: f64,
    floor: f64,
) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a Observation>,
{
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::invalid(
            "beta",
            format!("must be a nonnegative finite real, got {beta}"),
        ));
    }
    check_dim(anchor, coeffs.dim())?;
    let mut grad = local_risk_gradient(coeffs, batch, params, floor)?;
    if beta != 0.0 {
        for ((g, a), anchor_a) in grad
            .iter_mut()
            .zip(&coeffs.sensitivities)
            .zip(&anchor.sensitivities)
        {
            *g += beta * (a - anchor_a);
        }
    }
    Ok(grad)
}

/// Capacity-weighted population risk plus each producer's unweighted local
/// risk. Weights are normalized and summed in producer-id order, so the
/// result does not depend on the order of `clients`.
pub fn population_risk(
    clients: &[ProducerDataset],
    coeffs: &IndexCoefficients,
    floor: f64,
) -> Result<PopulationRisk> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let risks = exec::try_map(clients, |client| {
        Ok((
            client.id(),
            client.weight(),
            local_risk(coeffs, client, floor)?,
        ))
    })?;
    let mut sorted = risks;
    sorted.sort_by_key(|(id, _, _)| *id);
    let total_weight: f64 = sorted.iter().map(|(_, w, _)| w).sum();
    let mut global = 0.0;
    let mut per_client = BTreeMap::new();
    for (id, weight, risk) in sorted {
        global += weight / total_weight * risk;
        per_client.insert(id, risk);
    }
    Ok(PopulationRisk { global, per_client })
}

/// Output of [`population_risk`].
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationRisk {
    pub global: f64,
    pub per_client: BTreeMap<ProducerId, f64>,
}
