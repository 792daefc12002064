//! Synthetic heterogeneous producer populations.
//!
//! Each producer draws its own sensitivity vector, intercept, dispersion
//! triple and capacity from the configured ranges, then samples losses from
//! the structural model: covariates are correlated Gaussians plus a positive
//! shift, the conditional mean is the clamped power link of the producer's
//! own index, and losses are compound Poisson-gamma draws around it. The
//! generating truth is recorded next to each dataset so recovery can be
//! measured, which real data would not permit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec;
use crate::index::{self, index_value, IndexCoefficients, Observation, ProducerDataset};
use crate::seeds;
use crate::tweedie::{tweedie_sample, TweedieParams};

/// Covariate distribution: a Gaussian with the given mean vector and
/// covariance, shifted by `shift` in every coordinate.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CovariateModel {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub shift: f64,
}

impl CovariateModel {
    /// Zero mean, identity covariance, shift 2: keeps typical index values
    /// positive for sensitivity vectors with positive entries.
    pub fn standard(dim: usize) -> Self {
        let covariance = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            mean: vec![0.0; dim],
            covariance,
            shift: 2.0,
        }
    }
}

/// Dials of a synthetic population.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PopulationSpec {
    pub n_producers: usize,
    pub n_obs_per_producer: usize,
    pub j_covariates: usize,
    /// Population-level sensitivities the per-producer vectors jitter around.
    pub base_coeffs: Vec<f64>,
    /// Standard deviation of the per-producer Gaussian perturbation.
    pub coeff_jitter: f64,
    pub intercept_range: (f64, f64),
    pub p_range: (f64, f64),
    pub q_range: (f64, f64),
    pub phi_range: (f64, f64),
    pub weight_range: (f64, f64),
    pub covariates: CovariateModel,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_producers: 50,
            n_obs_per_producer: 2000,
            j_covariates: 2,
            base_coeffs: vec![0.5, 0.3],
            coeff_jitter: 0.05,
            intercept_range: (0.0, 0.0),
            p_range: (0.8, 1.2),
            q_range: (1.3, 1.7),
            phi_range: (0.5, 2.0),
            weight_range: (0.5, 1.5),
            covariates: CovariateModel::standard(2),
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_producers == 0 {
            return Err(Error::invalid("n_producers", "must be at least 1"));
        }
        if self.n_obs_per_producer == 0 {
            return Err(Error::invalid("n_obs_per_producer", "must be at least 1"));
        }
        if self.j_covariates == 0 {
            return Err(Error::invalid("j_covariates", "must be at least 1"));
        }
        if self.base_coeffs.len() != self.j_covariates {
            return Err(Error::invalid(
                "base_coeffs",
                format!(
                    "must have j_covariates = {} entries, got {}",
                    self.j_covariates,
                    self.base_coeffs.len()
                ),
            ));
        }
        if self.base_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("base_coeffs", "entries must be finite"));
        }
        if !self.coeff_jitter.is_finite() || self.coeff_jitter < 0.0 {
            return Err(Error::invalid(
                "coeff_jitter",
                "must be a nonnegative finite real",
            ));
        }
        check_range("intercept_range", self.intercept_range, f64::NEG_INFINITY)?;
        check_range("p_range", self.p_range, 0.0)?;
        check_range("phi_range", self.phi_range, 0.0)?;
        check_range("weight_range", self.weight_range, 0.0)?;
        let (q_lo, q_hi) = self.q_range;
        if !q_lo.is_finite() || !q_hi.is_finite() || q_lo > q_hi || q_lo <= 1.0 || q_hi >= 2.0 {
            return Err(Error::invalid(
                "q_range",
                format!("must be inside the open interval (1, 2), got [{q_lo}, {q_hi}]"),
            ));
        }
        if self.covariates.mean.len() != self.j_covariates {
            return Err(Error::invalid(
                "covariates.mean",
                format!(
                    "must have j_covariates = {} entries, got {}",
                    self.j_covariates,
                    self.covariates.mean.len()
                ),
            ));
        }
        if !self.covariates.shift.is_finite() {
            return Err(Error::invalid("covariates.shift", "must be finite"));
        }
        // Symmetry and positive semi-definiteness checked by the factorization.
        CovariateSampler::new(&self.covariates)?;
        Ok(())
    }
}

fn check_range(name: &'static str, (lo, hi): (f64, f64), strictly_above: f64) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi || lo <= strictly_above {
        return Err(Error::invalid(
            name,
            format!("must be a finite interval above {strictly_above}, got [{lo}, {hi}]"),
        ));
    }
    Ok(())
}

/// Lower-triangular factor of a symmetric positive semi-definite matrix.
/// Zero pivots are tolerated so degenerate (deterministic) covariates work.
#[allow(clippy::needless_range_loop)] // triangular index arithmetic
fn cholesky_psd(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = matrix.len();
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::invalid("covariance", "matrix must be square"));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid("covariance", "entries must be finite"));
            }
            if (v - matrix[j][i]).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(Error::invalid("covariance", "matrix must be symmetric"));
            }
        }
    }
    let mut factor = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut pivot = matrix[j][j];
        for k in 0..j {
            pivot -= factor[j][k] * factor[j][k];
        }
        let tol = 1e-10 * (1.0 + matrix[j][j].abs());
        if pivot < -tol {
            return Err(Error::invalid(
                "covariance",
                "matrix must be positive semi-definite",
            ));
        }
        if pivot <= tol {
            // Semi-definite direction: the rest of the column must vanish.
            for i in (j + 1)..n {
                let mut residual = matrix[i][j];
                for k in 0..j {
                    residual -= factor[i][k] * factor[j][k];
                }
                if residual.abs() > 1e-8 * (1.0 + matrix[i][j].abs()) {
                    return Err(Error::invalid(
                        "covariance",
                        "matrix must be positive semi-definite",
                    ));
                }
            }
            continue;
        }
        let root = pivot.sqrt();
        factor[j][j] = root;
        for i in (j + 1)..n {
            let mut value = matrix[i][j];
            for k in 0..j {
                value -= factor[i][k] * factor[j][k];
            }
            factor[i][j] = value / root;
        }
    }
    Ok(factor)
}

/// Draws correlated, shifted Gaussian covariate vectors.
pub struct CovariateSampler {
    mean: Vec<f64>,
    factor: Vec<Vec<f64>>,
    shift: f64,
}

impl CovariateSampler {
    pub fn new(model: &CovariateModel) -> Result<Self> {
        if model.covariance.len() != model.mean.len() {
            return Err(Error::invalid(
                "covariance",
                "must have one row per covariate",
            ));
        }
        Ok(Self {
            mean: model.mean.clone(),
            factor: cholesky_psd(&model.covariance)?,
            shift: model.shift,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let dim = self.mean.len();
        let normals: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        (0..dim)
            .map(|i| {
                let mut y = self.mean[i] + self.shift;
                for (l, z) in self.factor[i][..=i].iter().zip(&normals) {
                    y += l * z;
                }
                y
            })
            .collect()
    }
}

/// One covariate vector drawn from `spec.covariates`.
pub fn sample_covariates<R: Rng + ?Sized>(spec: &PopulationSpec, rng: &mut R) -> Result<Vec<f64>> {
    Ok(CovariateSampler::new(&spec.covariates)?.sample(rng))
}

/// The structural parameters a producer was generated from, plus the exact
/// conditional mean behind every observation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GeneratingTruth {
    /// Producer sensitivities and generating intercept.
    pub coeffs: IndexCoefficients,
    /// Conditional mean of each observation, in dataset order.
    pub means: Vec<f64>,
}

/// A dataset together with its generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProducer {
    pub dataset: ProducerDataset,
    pub truth: GeneratingTruth,
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn generate_with_sampler<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    sampler: &CovariateSampler,
    producer_index: u64,
    rng: &mut R,
) -> Result<GeneratedProducer> {
    let mut sensitivities = spec.base_coeffs.clone();
    for c in &mut sensitivities {
        let jitter: f64 = StandardNormal.sample(rng);
        *c += spec.coeff_jitter * jitter;
    }
    let intercept = sample_range(rng, spec.intercept_range);
    let truth_coeffs = IndexCoefficients::with_intercept(sensitivities, intercept)?;

    let p = sample_range(rng, spec.p_range);
    let q = sample_range(rng, spec.q_range);
    let phi = sample_range(rng, spec.phi_range);
    let params = TweedieParams::new(p, q, phi)?;
    let weight = sample_range(rng, spec.weight_range);

    let mut observations = Vec::with_capacity(spec.n_obs_per_producer);
    let mut means = Vec::with_capacity(spec.n_obs_per_producer);
    for _ in 0..spec.n_obs_per_producer {
        let covariates = sampler.sample(rng);
        let z = index_value(&truth_coeffs, &covariates)?;
        let mu = index::clamped_power(z, p, index::DEFAULT_INDEX_FLOOR);
        let loss = tweedie_sample(mu, &params, rng)?;
        observations.push(Observation { loss, covariates });
        means.push(mu);
    }
    let dataset = ProducerDataset::new(producer_index, observations, params, weight)?;
    Ok(GeneratedProducer {
        dataset,
        truth: GeneratingTruth {
            coeffs: truth_coeffs,
            means,
        },
    })
}

/// Generate one producer from its own random stream.
pub fn generate_producer<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    producer_index: u64,
    rng: &mut R,
) -> Result<GeneratedProducer> {
    spec.validate()?;
    let sampler = CovariateSampler::new(&spec.covariates)?;
    generate_with_sampler(spec, &sampler, producer_index, rng)
}

/// Generate the whole population deterministically: producer `i` draws from
/// the stream derived from `(master_seed, i)`.
pub fn generate_population(
    spec: &PopulationSpec,
    master_seed: u64,
) -> Result<Vec<GeneratedProducer>> {
    spec.validate()?;
    let sampler = CovariateSampler::new(&spec.covariates)?;
    let indices: Vec<u64> = (0..spec.n_producers as u64).collect();
    exec::try_map(&indices, |&i| {
        let mut rng = seeds::derive_rng(master_seed, &[seeds::STREAM_PRODUCER, i]);
        generate_with_sampler(spec, &sampler, i, &mut rng)
    })
}

/// Datasets only, truth stripped; what the protocol sees.
pub fn datasets(producers: &[GeneratedProducer]) -> Vec<ProducerDataset> {
    producers.iter().map(|g| g.dataset.clone()).collect()
}
