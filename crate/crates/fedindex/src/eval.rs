//! Evaluation: the pooled-data oracle fit, basis-risk analysis through a
//! binned conditional-mean estimator, recovery metrics and the Monte Carlo
//! protocol around the federated trainer.

use crate::error::{Error, Result};
use crate::exec;
use crate::index::{
    self, index_value, local_risk_gradient, population_risk, IndexCoefficients, ProducerDataset,
    ProducerId,
};
use crate::protocol::{
    run_training_with_init, AggregatorConfig, LocalUpdateConfig, RoundTrace, DEFAULT_INIT_COEFF,
};
use crate::seeds;

/// Settings for the centralized full-batch gradient descent oracle.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CentralizedConfig {
    /// Starting point; the default constant start when absent.
    pub init: Option<IndexCoefficients>,
    /// Initial step size; halved by backtracking until the step descends.
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    pub floor: f64,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        Self {
            init: None,
            learning_rate: 0.5,
            max_iterations: 10_000,
            grad_tol: 1e-8,
            floor: index::DEFAULT_INDEX_FLOOR,
        }
    }
}

/// How the oracle fit stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FitStatus {
    /// Gradient norm fell below the configured tolerance.
    Converged,
    /// No strictly decreasing step remained representable: the iterate sits
    /// at the floating-point floor of the objective, with the gradient
    /// typically a few orders above the tolerance.
    NumericalFloor,
    IterationCapReached,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CentralizedFit {
    pub coeffs: IndexCoefficients,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    pub status: FitStatus,
}

/// Capacity-weighted global objective at `coeffs`.
pub fn global_objective(
    clients: &[ProducerDataset],
    coeffs: &IndexCoefficients,
    floor: f64,
) -> Result<f64> {
    Ok(population_risk(clients, coeffs, floor)?.global)
}

fn global_gradient(
    clients: &[ProducerDataset],
    coeffs: &IndexCoefficients,
    floor: f64,
) -> Result<Vec<f64>> {
    let mut parts = exec::try_map(clients, |client| {
        let grad = local_risk_gradient(coeffs, client.observations(), client.params(), floor)?;
        Ok((client.id(), client.weight(), grad))
    })?;
    parts.sort_by_key(|(id, _, _)| *id);
    let total: f64 = parts.iter().map(|(_, w, _)| w).sum();
    let mut grad = vec![0.0; coeffs.dim()];
    for (_, weight, part) in parts {
        let normalized = weight / total;
        for (g, p) in grad.iter_mut().zip(part) {
            *g += normalized * p;
        }
    }
    Ok(grad)
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Minimize the global objective directly on pooled access, by full-batch
/// gradient descent with backtracking. Infeasible in the real deployment,
/// feasible here because the data is synthetic; used as the oracle baseline.
pub fn centralized_fit(
    clients: &[ProducerDataset],
    cfg: &CentralizedConfig,
) -> Result<CentralizedFit> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let dim = clients[0].dim();
    let mut coeffs = match &cfg.init {
        Some(init) => {
            if init.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: init.dim(),
                });
            }
            init.clone()
        }
        None => IndexCoefficients::constant(dim, DEFAULT_INIT_COEFF)?,
    };
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::invalid(
            "learning_rate",
            "must be a positive finite real",
        ));
    }
    if !(cfg.grad_tol.is_finite() && cfg.grad_tol > 0.0) {
        return Err(Error::invalid("grad_tol", "must be a positive finite real"));
    }

    let mut objective = global_objective(clients, &coeffs, cfg.floor)?;
    // Warm-started backtracking: each search begins at twice the last
    // accepted step, capped by the configured rate.
    let mut step = cfg.learning_rate;
    for iteration in 0..cfg.max_iterations {
        let grad = global_gradient(clients, &coeffs, cfg.floor)?;
        let grad_norm = l2_norm(&grad);
        if !grad_norm.is_finite() || !objective.is_finite() {
            return Err(Error::NonFinite("centralized objective or gradient".into()));
        }
        if grad_norm < cfg.grad_tol {
            return Ok(CentralizedFit {
                coeffs,
                iterations: iteration,
                grad_norm,
                objective,
                status: FitStatus::Converged,
            });
        }
        // Backtracking line search with an Armijo condition.
        step = (2.0 * step).min(cfg.learning_rate);
        let mut candidate;
        let mut candidate_objective;
        loop {
            candidate = coeffs.clone();
            candidate.add_scaled(-step, &grad);
            candidate_objective = global_objective(clients, &candidate, cfg.floor)?;
            // Strict decrease: once the Armijo margin falls below one ulp
            // of the objective, zero-progress steps must not be accepted.
            if candidate_objective <= objective - 1e-4 * step * grad_norm * grad_norm
                && candidate_objective < objective
            {
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Ok(CentralizedFit {
                    coeffs,
                    iterations: iteration,
                    grad_norm,
                    objective,
                    status: FitStatus::NumericalFloor,
                });
            }
        }
        coeffs = candidate;
        objective = candidate_objective;
    }
    let grad_norm = l2_norm(&global_gradient(clients, &coeffs, cfg.floor)?);
    Ok(CentralizedFit {
        coeffs,
        iterations: cfg.max_iterations,
        grad_norm,
        objective,
        status: FitStatus::IterationCapReached,
    })
}

/// Equal-count binned estimate of the conditional loss mean given the index.
///
/// Bins are quantile bins of the in-sample index values, ties merged into the
/// earlier bin so every distinct value lives in exactly one bin. Evaluation
/// outside the observed range returns the nearest bin's mean.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BinnedConditionalMean {
    upper_edges: Vec<f64>,
    bin_means: Vec<f64>,
}

impl BinnedConditionalMean {
    pub fn n_bins(&self) -> usize {
        self.bin_means.len()
    }

    pub fn bin_means(&self) -> &[f64] {
        &self.bin_means
    }

    /// Which bin `z` falls into (nearest bin outside the observed range).
    pub fn bin_index(&self, z: f64) -> usize {
        let idx = self.upper_edges.partition_point(|&edge| edge < z);
        idx.min(self.upper_edges.len() - 1)
    }

    /// The estimated conditional mean at `z`.
    pub fn evaluate(&self, z: f64) -> f64 {
        self.bin_means[self.bin_index(z)]
    }
}

/// Build the binned conditional-mean estimator for one producer under the
/// given index coefficients. Requires at least `n_bins` observations; if all
/// index values coincide the estimator collapses to a single global-mean bin.
pub fn conditional_mean_estimator(
    producer: &ProducerDataset,
    coeffs: &IndexCoefficients,
    n_bins: usize,
) -> Result<BinnedConditionalMean> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins", "must be at least 1"));
    }
    let n = producer.observations().len();
    if n < n_bins {
        return Err(Error::invalid(
            "n_bins",
            format!("needs at least n_bins = {n_bins} observations, got {n}"),
        ));
    }
    let mut pairs: Vec<(f64, f64)> = producer
        .observations()
        .iter()
        .map(|obs| Ok((index_value(coeffs, &obs.covariates)?, obs.loss)))
        .collect::<Result<_>>()?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut upper_edges = Vec::with_capacity(n_bins);
    let mut bin_means = Vec::with_capacity(n_bins);
    let mut start = 0usize;
    for k in 0..n_bins {
        let mut end = ((k + 1) * n) / n_bins;
        // Ties never straddle a boundary.
        while end < n && pairs[end - 1].0 == pairs[end].0 {
            end += 1;
        }
        if end <= start {
            continue;
        }
        let mean = pairs[start..end].iter().map(|(_, x)| x).sum::<f64>() / (end - start) as f64;
        upper_edges.push(pairs[end - 1].0);
        bin_means.push(mean);
        start = end;
    }
    Ok(BinnedConditionalMean {
        upper_edges,
        bin_means,
    })
}

/// Residual summary quantiles.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Quantiles {
    pub p05: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Basis-risk residuals of one producer above the trigger threshold.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BasisRiskReport {
    pub producer: ProducerId,
    pub z0: f64,
    pub residuals: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub quantiles: Quantiles,
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let position = level.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    let frac = position - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Residuals `x - m(z)` restricted to observations with `z > z0`, with
/// summary statistics. Errors when the selection is empty.
pub fn basis_risk(
    producer: &ProducerDataset,
    coeffs: &IndexCoefficients,
    estimator: &BinnedConditionalMean,
    z0: f64,
) -> Result<BasisRiskReport> {
    let mut residuals = Vec::new();
    for obs in producer.observations() {
        let z = index_value(coeffs, &obs.covariates)?;
        if z > z0 {
            residuals.push(obs.loss - estimator.evaluate(z));
        }
    }
    if residuals.is_empty() {
        return Err(Error::EmptySelection { z0 });
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std_dev = if residuals.len() > 1 {
        (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = residuals.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let quantiles = Quantiles {
        p05: quantile(&sorted, 0.05),
        p25: quantile(&sorted, 0.25),
        p50: quantile(&sorted, 0.50),
        p75: quantile(&sorted, 0.75),
        p95: quantile(&sorted, 0.95),
    };
    Ok(BasisRiskReport {
        producer: producer.id(),
        z0,
        residuals,
        mean,
        std_dev,
        quantiles,
    })
}

/// The in-sample index quantile used as the default trigger threshold.
pub fn index_quantile(
    producer: &ProducerDataset,
    coeffs: &IndexCoefficients,
    level: f64,
) -> Result<f64> {
    let mut values: Vec<f64> = producer
        .observations()
        .iter()
        .map(|obs| index_value(coeffs, &obs.covariates))
        .collect::<Result<_>>()?;
    values.sort_by(|a, b| a.total_cmp(b));
    Ok(quantile(&values, level))
}

/// Two-sample Kolmogorov-Smirnov distance between empirical distributions.
pub fn ks_distance(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut distance: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let threshold = a[i].min(b[j]);
        while i < a.len() && a[i] <= threshold {
            i += 1;
        }
        while j < b.len() && b[j] <= threshold {
            j += 1;
        }
        distance = distance.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(distance)
}

/// L2 distance between fitted sensitivities and a reference vector.
pub fn recovery_error(fitted: &IndexCoefficients, truth: &[f64]) -> Result<f64> {
    if fitted.dim() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: fitted.dim(),
            actual: truth.len(),
        });
    }
    Ok(fitted
        .sensitivities()
        .iter()
        .zip(truth)
        .map(|(a, t)| (a - t) * (a - t))
        .sum::<f64>()
        .sqrt())
}

/// Per-round mean and empirical band of one tracked quantity.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SummaryPoint {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Monte Carlo aggregate over repeated training runs.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MonteCarloSummary {
    pub n_runs: usize,
    pub lower_level: f64,
    pub upper_level: f64,
    /// Global loss per round.
    pub loss: Vec<SummaryPoint>,
    /// Each coefficient per round: `coeffs[round][coordinate]`.
    pub coeffs: Vec<Vec<SummaryPoint>>,
}

/// Repeat training with explicitly provided per-run seeds.
pub fn monte_carlo_runs_with(
    init: &IndexCoefficients,
    clients: &[ProducerDataset],
    agg: &AggregatorConfig,
    local_cfg: &LocalUpdateConfig,
    rounds: u64,
    run_seeds: &[u64],
) -> Result<Vec<Vec<RoundTrace>>> {
    if run_seeds.is_empty() {
        return Err(Error::Empty("run seed list"));
    }
    exec::try_map(run_seeds, |&seed| {
        let (_, traces) =
            run_training_with_init(init.clone(), clients, agg, local_cfg, rounds, seed)?;
        Ok(traces)
    })
}

/// Repeat training `n_runs` times on the same population, each run on its
/// own stream derived from the master seed.
pub fn monte_carlo_runs(
    clients: &[ProducerDataset],
    agg: &AggregatorConfig,
    local_cfg: &LocalUpdateConfig,
    rounds: u64,
    n_runs: usize,
    master_seed: u64,
) -> Result<Vec<Vec<RoundTrace>>> {
    let dim = clients.first().ok_or(Error::Empty("client list"))?.dim();
    let init = IndexCoefficients::constant(dim, DEFAULT_INIT_COEFF)?;
    let seeds = derive_run_seeds(master_seed, n_runs);
    monte_carlo_runs_with(&init, clients, agg, local_cfg, rounds, &seeds)
}

/// The per-run seeds `monte_carlo_runs` derives from a master seed.
pub fn derive_run_seeds(master_seed: u64, n_runs: usize) -> Vec<u64> {
    (0..n_runs as u64)
        .map(|run| seeds::derive_seed(master_seed, &[seeds::STREAM_RUN, run]))
        .collect()
}

/// Per-round means and empirical quantile bands across runs.
pub fn summarize_runs(
    runs: &[Vec<RoundTrace>],
    lower_level: f64,
    upper_level: f64,
) -> Result<MonteCarloSummary> {
    if runs.len() < 2 {
        return Err(Error::invalid("runs", "need at least 2 runs to form bands"));
    }
    let rounds = runs[0].len();
    if runs.iter().any(|r| r.len() != rounds) {
        return Err(Error::invalid(
            "runs",
            "all runs must have the same round count",
        ));
    }
    if rounds == 0 {
        return Err(Error::Empty("round traces"));
    }
    if !(0.0..=1.0).contains(&lower_level)
        || !(0.0..=1.0).contains(&upper_level)
        || lower_level > upper_level
    {
        return Err(Error::invalid(
            "band levels",
            "need 0 <= lower <= upper <= 1",
        ));
    }
    let dim = runs[0][0].coeffs_after.dim();

    let summarize = |values: &mut Vec<f64>| -> SummaryPoint {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.sort_by(|a, b| a.total_cmp(b));
        SummaryPoint {
            mean,
            lower: quantile(values, lower_level),
            upper: quantile(values, upper_level),
        }
    };

    let mut loss = Vec::with_capacity(rounds);
    let mut coeffs = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let mut losses: Vec<f64> = runs.iter().map(|r| r[round].global_loss).collect();
        loss.push(summarize(&mut losses));
        let mut per_coord = Vec::with_capacity(dim);
        for j in 0..dim {
            let mut values: Vec<f64> = runs
                .iter()
                .map(|r| r[round].coeffs_after.sensitivities()[j])
                .collect();
            per_coord.push(summarize(&mut values));
        }
        coeffs.push(per_coord);
    }
    Ok(MonteCarloSummary {
        n_runs: runs.len(),
        lower_level,
        upper_level,
        loss,
        coeffs,
    })
}

/// The full Monte Carlo protocol: repeated runs plus per-round summaries
/// with the given empirical band levels.
pub fn monte_carlo(
    clients: &[ProducerDataset],
    agg: &AggregatorConfig,
    local_cfg: &LocalUpdateConfig,
    rounds: u64,
    n_runs: usize,
    master_seed: u64,
    band_levels: (f64, f64),
) -> Result<MonteCarloSummary> {
    let runs = monte_carlo_runs(clients, agg, local_cfg, rounds, n_runs, master_seed)?;
    summarize_runs(&runs, band_levels.0, band_levels.1)
}
