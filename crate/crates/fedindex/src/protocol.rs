//! Synchronous federated optimization: per-client local updates and the
//! FedAvg / FedProx / FedOpt server rules.
//!
//! A round broadcasts the global coefficients, lets every client run its
//! local epochs independently (in parallel when the `parallel` feature is
//! on), then aggregates. Per-client random streams are derived from
//! `(master seed, producer id, round)` and aggregation sums in producer-id
//! order, so results are identical whatever the physical execution order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::index::{
    self, population_risk, prox_local_risk_gradient, IndexCoefficients, ProducerDataset, ProducerId,
};
use crate::seeds;

/// Default start value for every coefficient; strictly positive so training
/// does not begin inside the flat clamp region.
pub const DEFAULT_INIT_COEFF: f64 = 0.1;

/// Client-side optimization settings for one round.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LocalUpdateConfig {
    /// Full passes over the local dataset per round. Zero is allowed and
    /// leaves the broadcast coefficients untouched.
    pub epochs: usize,
    /// Mini-batch size; the tail batch of an epoch may be smaller and is
    /// used as-is.
    pub batch_size: usize,
    /// Local step size.
    pub learning_rate: f64,
    /// Proximal pull towards the broadcast coefficients. Applied only when
    /// the aggregator is FedProx; zero disables it.
    pub prox_beta: f64,
    /// Index clamp handed down to the risk functions.
    pub floor: f64,
}

impl Default for LocalUpdateConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 256,
            learning_rate: 0.01,
            prox_beta: 0.0,
            floor: index::DEFAULT_INDEX_FLOOR,
        }
    }
}

impl LocalUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid(
                "learning_rate",
                format!(
                    "must be a nonnegative finite real, got {}",
                    self.learning_rate
                ),
            ));
        }
        if !self.prox_beta.is_finite() || self.prox_beta < 0.0 {
            return Err(Error::invalid(
                "prox_beta",
                format!("must be a nonnegative finite real, got {}", self.prox_beta),
            ));
        }
        if !self.floor.is_finite() || self.floor <= 0.0 {
            return Err(Error::invalid(
                "floor",
                format!("must be a positive finite real, got {}", self.floor),
            ));
        }
        Ok(())
    }
}

/// Server-side Adam settings for FedOpt.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FedOptConfig {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for FedOptConfig {
    fn default() -> Self {
        Self {
            server_lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl FedOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.server_lr.is_finite() || self.server_lr <= 0.0 {
            return Err(Error::invalid(
                "server_lr",
                "must be a positive finite real",
            ));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
                return Err(Error::invalid(
                    name,
                    format!("must lie inside the open interval (0, 1), got {beta}"),
                ));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", "must be a positive finite real"));
        }
        Ok(())
    }
}

/// Which server aggregation rule a round applies. FedProx differs from
/// FedAvg only through the proximal term inside the local updates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum AggregatorConfig {
    FedAvg,
    FedProx,
    FedOpt(FedOptConfig),
}

impl AggregatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorConfig::FedAvg => "fedavg",
            AggregatorConfig::FedProx => "fedprox",
            AggregatorConfig::FedOpt(_) => "fedopt",
        }
    }

    fn effective_prox_beta(&self, cfg: &LocalUpdateConfig) -> f64 {
        match self {
            AggregatorConfig::FedProx => cfg.prox_beta,
            _ => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AggregatorConfig::FedOpt(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }
}

/// Server-held state between rounds: current coefficients, the completed
/// round counter and the Adam moments used by FedOpt.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    coeffs: IndexCoefficients,
    round: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl ServerState {
    pub fn new(coeffs: IndexCoefficients) -> Self {
        let dim = coeffs.dim();
        Self {
            coeffs,
            round: 0,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
        }
    }

    pub fn coeffs(&self) -> &IndexCoefficients {
        &self.coeffs
    }

    /// Completed rounds; also the 1-based bias-correction clock after the
    /// next FedOpt step.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

/// Per-round record: the aggregated coefficients and the global objective
/// evaluated at them, plus each producer's own local risk.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RoundTrace {
    pub round: u64,
    pub global_loss: f64,
    pub coeffs_after: IndexCoefficients,
    pub per_client_losses: BTreeMap<ProducerId, f64>,
}

/// Run one client's local epochs starting from the broadcast coefficients.
///
/// Each epoch shuffles the dataset with `rng` and walks it in mini-batches,
/// taking one proximal gradient step per batch with the broadcast
/// coefficients as anchor. Touches only this client's data.
pub fn local_update<R: Rng + ?Sized>(
    data: &ProducerDataset,
    global_coeffs: &IndexCoefficients,
    cfg: &LocalUpdateConfig,
    rng: &mut R,
) -> Result<IndexCoefficients> {
    cfg.validate()?;
    if global_coeffs.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: global_coeffs.dim(),
            actual: data.dim(),
        });
    }
    let observations = data.observations();
    let mut current = global_coeffs.clone();
    let mut order: Vec<usize> = (0..observations.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let grad = prox_local_risk_gradient(
                &current,
                batch.iter().map(|&i| &observations[i]),
                data.params(),
                global_coeffs,
                cfg.prox_beta,
                cfg.floor,
            )?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    producer: data.id(),
                });
            }
            current.add_scaled(-cfg.learning_rate, &grad);
        }
    }
    Ok(current)
}

fn check_updates(updates: &[(f64, IndexCoefficients)]) -> Result<usize> {
    let (first, rest) = updates.split_first().ok_or(Error::Empty("update list"))?;
    let dim = first.1.dim();
    for (weight, coeffs) in updates {
        if !weight.is_finite() || *weight <= 0.0 {
            return Err(Error::invalid(
                "weight",
                format!("must be a positive finite real, got {weight}"),
            ));
        }
        if coeffs.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: coeffs.dim(),
            });
        }
    }
    if rest
        .iter()
        .any(|(_, c)| c.intercept() != first.1.intercept())
    {
        return Err(Error::invalid(
            "updates",
            "all updates must carry the same intercept",
        ));
    }
    Ok(dim)
}

/// Weighted average of client coefficients with weights normalized to sum
/// to one, so the result is a convex combination.
pub fn aggregate_fedavg(updates: &[(f64, IndexCoefficients)]) -> Result<IndexCoefficients> {
    let dim = check_updates(updates)?;
    let total: f64 = updates.iter().map(|(w, _)| w).sum();
    let mut averaged = vec![0.0; dim];
    for (weight, coeffs) in updates {
        let normalized = weight / total;
        for (acc, a) in averaged.iter_mut().zip(coeffs.sensitivities()) {
            *acc += normalized * a;
        }
    }
    // The intercept is fixed during local updates, so it passes through.
    match updates[0].1.intercept() {
        Some(b) => IndexCoefficients::with_intercept(averaged, b),
        None => IndexCoefficients::new(averaged),
    }
}

/// Server pseudo-gradient: the normalized weighted sum of client
/// displacements away from the broadcast coefficients.
pub fn pseudo_gradient(
    global_coeffs: &IndexCoefficients,
    updates: &[(f64, IndexCoefficients)],
) -> Result<Vec<f64>> {
    let dim = check_updates(updates)?;
    if global_coeffs.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: global_coeffs.dim(),
            actual: dim,
        });
    }
    let total: f64 = updates.iter().map(|(w, _)| w).sum();
    let mut grad = vec![0.0; dim];
    for (weight, coeffs) in updates {
        let normalized = weight / total;
        for ((g, global), a) in grad
            .iter_mut()
            .zip(global_coeffs.sensitivities())
            .zip(coeffs.sensitivities())
        {
            *g += normalized * (global - a);
        }
    }
    Ok(grad)
}

/// One Adam step on the pseudo-gradient. The bias-correction clock is the
/// 1-based round counter, starting at 1 on the first step.
pub fn fedopt_step(
    state: &ServerState,
    pseudo_grad: &[f64],
    cfg: &FedOptConfig,
) -> Result<ServerState> {
    cfg.validate()?;
    if pseudo_grad.len() != state.coeffs.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.coeffs.dim(),
            actual: pseudo_grad.len(),
        });
    }
    let mut next = state.clone();
    next.round = state.round + 1;
    let clock = next.round as i32;
    let bias1 = 1.0 - cfg.beta1.powi(clock);
    let bias2 = 1.0 - cfg.beta2.powi(clock);
    let coeffs = next.coeffs.sensitivities_mut();
    for j in 0..pseudo_grad.len() {
        let g = pseudo_grad[j];
        let m = cfg.beta1 * state.first_moment[j] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.second_moment[j] + (1.0 - cfg.beta2) * g * g;
        next.first_moment[j] = m;
        next.second_moment[j] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        coeffs[j] -= cfg.server_lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(next)
}

/// Run one synchronous round: broadcast, local updates for every client,
/// aggregate, then evaluate the global objective at the new coefficients.
///
/// `rngs[i]` is client `clients[i]`'s stream for this round.
pub fn run_round<R: Rng + Send>(
    server: ServerState,
    clients: &[ProducerDataset],
    agg: &AggregatorConfig,
    local_cfg: &LocalUpdateConfig,
    rngs: &mut [R],
) -> Result<(ServerState, RoundTrace)> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    if rngs.len() != clients.len() {
        return Err(Error::invalid(
            "rngs",
            format!(
                "need one stream per client, got {} for {}",
                rngs.len(),
                clients.len()
            ),
        ));
    }
    agg.validate()?;
    local_cfg.validate()?;
    let round = server.round + 1;
    let mut effective_cfg = local_cfg.clone();
    effective_cfg.prox_beta = agg.effective_prox_beta(local_cfg);
    let broadcast = server.coeffs.clone();

    let mut updates = exec::try_map_zip(clients, rngs, |client, rng| {
        let update =
            local_update(client, &broadcast, &effective_cfg, rng).map_err(|e| e.at_round(round))?;
        Ok((client.id(), client.weight(), update))
    })?;
    // Fixed producer-id order makes aggregation independent of client order.
    updates.sort_by_key(|(id, _, _)| *id);
    let weighted: Vec<(f64, IndexCoefficients)> =
        updates.into_iter().map(|(_, w, u)| (w, u)).collect();

    let next = match agg {
        AggregatorConfig::FedAvg | AggregatorConfig::FedProx => {
            let mut next = server;
            next.coeffs = aggregate_fedavg(&weighted)?;
            next.round = round;
            next
        }
        AggregatorConfig::FedOpt(cfg) => {
            let grad = pseudo_gradient(&server.coeffs, &weighted)?;
            fedopt_step(&server, &grad, cfg)?
        }
    };

    let risk = population_risk(clients, &next.coeffs, local_cfg.floor)?;
    for (&producer, &loss) in &risk.per_client {
        if !loss.is_finite() {
            return Err(Error::Diverged {
                round,
                producer,
                quantity: "loss",
            });
        }
    }
    let trace = RoundTrace {
        round,
        global_loss: risk.global,
        coeffs_after: next.coeffs.clone(),
        per_client_losses: risk.per_client,
    };
    Ok((next, trace))
}

fn validate_clients(clients: &[ProducerDataset], dim: usize) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let mut ids: Vec<ProducerId> = clients.iter().map(|c| c.id()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("clients", "producer ids must be unique"));
    }
    for client in clients {
        if client.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: client.dim(),
            });
        }
    }
    Ok(())
}

/// Continue training from an existing server state for `additional_rounds`.
/// Streams are keyed by `(master_seed, producer id, round number)`, so a
/// resumed run is bit-identical to an uninterrupted one.
pub fn resume_training(
    mut server: ServerState,
    clients: &[ProducerDataset],
    agg: &AggregatorConfig,
    local_cfg: &LocalUpdateConfig,
    additional_rounds: u64,
    master_seed: u64,
) -> Result<(ServerState, Vec<RoundTrace>)> {
    validate_clients(clients, server.coeffs.dim())?;
    let mut traces = Vec::with_capacity(additional_rounds as usize);
    for _ in 0..additional_rounds {
        let round = server.round + 1;
        let mut rngs: Vec<ChaCha8Rng> = clients
            .iter()
            .map(|c| seeds::derive_rng(master_seed, &[seeds::STREAM_LOCAL_UPDATE, c.id(), round]))
            .collect();
        let (next, trace) = run_round(server, clients, agg, local_cfg, &mut rngs)?;
        server = next;
        traces.push(trace);
    }
    Ok((server, traces))
}

/// Federated training from an explicit starting point.
pub fn run_training_with_init(
    init: IndexCoefficients,
    clients: &[ProducerDataset],
    agg: &AggregatorConfig,
    local_cfg: &LocalUpdateConfig,
    rounds: u64,
    master_seed: u64,
) -> Result<(IndexCoefficients, Vec<RoundTrace>)> {
    let server = ServerState::new(init);
    let (server, traces) = resume_training(server, clients, agg, local_cfg, rounds, master_seed)?;
    Ok((server.coeffs, traces))
}

/// Federated training from the default constant start
/// [`DEFAULT_INIT_COEFF`]. Bit-reproducible given the same inputs and
/// master seed.
pub fn run_training(
    clients: &[ProducerDataset],
    agg: &AggregatorConfig,
    local_cfg: &LocalUpdateConfig,
    rounds: u64,
    master_seed: u64,
) -> Result<(IndexCoefficients, Vec<RoundTrace>)> {
    let dim = clients.first().ok_or(Error::Empty("client list"))?.dim();
    let init = IndexCoefficients::constant(dim, DEFAULT_INIT_COEFF)?;
    run_training_with_init(init, clients, agg, local_cfg, rounds, master_seed)
}
