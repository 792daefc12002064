//! Federated calibration of a shared parametric loss index.
//!
//! A population of producers holds private daily loss observations driven by
//! common meteorological covariates. Each producer models its losses with a
//! compound Poisson-gamma GLM carrying its own link exponent, variance power
//! and dispersion. The crate learns the single index `z = a . y` shared by
//! all of them by minimizing the capacity-weighted deviance objective with
//! synchronous federated optimization — FedAvg, FedProx or FedOpt — without
//! ever moving raw observations between clients.
//!
//! Modules:
//!
//! - [`tweedie`]: deviance, its derivative, compound Poisson-gamma sampling
//! - [`index`]: the index model, datasets and local empirical risk
//! - [`protocol`]: local updates, the three server rules, the round loop
//! - [`synth`]: synthetic heterogeneous populations with recorded truth
//! - [`eval`]: centralized oracle, basis risk, Monte Carlo summaries
//! - [`io`]: population files and CSV trace rendering
//! - [`seeds`]: deterministic stream derivation
//!
//! Everything is bit-reproducible for a fixed master seed: random streams
//! are keyed by `(seed, producer, round)` or `(seed, run)`, never by
//! execution order, and aggregation always sums in producer-id order. The
//! default `parallel` feature fans client updates and Monte Carlo runs out
//! over rayon; disabling it yields the same results sequentially.

pub mod error;
pub mod eval;
mod exec;
pub mod index;
pub mod io;
pub mod protocol;
pub mod seeds;
pub mod synth;
pub mod tweedie;

pub use error::{Error, Result};
pub use index::{IndexCoefficients, Observation, ProducerDataset, ProducerId, DEFAULT_INDEX_FLOOR};
pub use protocol::{
    AggregatorConfig, FedOptConfig, LocalUpdateConfig, RoundTrace, ServerState, DEFAULT_INIT_COEFF,
};
pub use tweedie::TweedieParams;
