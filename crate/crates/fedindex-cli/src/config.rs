//! TOML experiment configuration.
//!
//! Only `master_seed` is required; every other field has a documented
//! default (see the README reference). Unknown keys are rejected so typos
//! surface as parse errors, and validation reports the offending field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedindex::eval::CentralizedConfig;
use fedindex::protocol::{AggregatorConfig, FedOptConfig, LocalUpdateConfig};
use fedindex::synth::{CovariateModel, PopulationSpec};
use fedindex::IndexCoefficients;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "defaults::rounds")]
    pub rounds: u64,
    #[serde(default = "defaults::n_runs")]
    pub n_runs: usize,
    /// Every coefficient starts at this value.
    #[serde(default = "defaults::init_coeff")]
    pub init_coeff: f64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Load a saved population instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationSection>,
    #[serde(default)]
    pub aggregator: AggregatorSection,
    #[serde(default)]
    pub local: LocalSection,
    #[serde(default)]
    pub centralized: CentralizedSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    /// Named external coefficient vectors scored alongside the fitted index.
    #[serde(default)]
    pub baselines: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    #[serde(default = "defaults::n_producers")]
    pub n_producers: usize,
    #[serde(default = "defaults::n_obs_per_producer")]
    pub n_obs_per_producer: usize,
    #[serde(default = "defaults::j_covariates")]
    pub j_covariates: usize,
    /// Defaults to [0.5, 0.3]; must be given explicitly for other dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_coeffs: Option<Vec<f64>>,
    #[serde(default = "defaults::coeff_jitter")]
    pub coeff_jitter: f64,
    #[serde(default = "defaults::intercept_range")]
    pub intercept_range: (f64, f64),
    #[serde(default = "defaults::p_range")]
    pub p_range: (f64, f64),
    #[serde(default = "defaults::q_range")]
    pub q_range: (f64, f64),
    #[serde(default = "defaults::phi_range")]
    pub phi_range: (f64, f64),
    #[serde(default = "defaults::weight_range")]
    pub weight_range: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<CovariatesSection>,
}

impl Default for PopulationSection {
    fn default() -> Self {
        toml::from_str("").expect("empty population section has defaults for every field")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariatesSection {
    /// Defaults to the zero vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Defaults to the identity matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default = "defaults::shift")]
    pub shift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSection {
    /// One of `fedavg`, `fedprox`, `fedopt`.
    #[serde(default = "defaults::aggregator_kind")]
    pub kind: String,
    /// Server Adam settings; only valid when kind = "fedopt".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fedopt: Option<FedOptSection>,
}

impl Default for AggregatorSection {
    fn default() -> Self {
        Self {
            kind: defaults::aggregator_kind(),
            fedopt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedOptSection {
    #[serde(default = "defaults::server_lr")]
    pub server_lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSection {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::prox_beta")]
    pub prox_beta: f64,
    #[serde(default = "defaults::floor")]
    pub floor: f64,
}

impl Default for LocalSection {
    fn default() -> Self {
        let cfg = LocalUpdateConfig::default();
        Self {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            prox_beta: cfg.prox_beta,
            floor: defaults::floor(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedSection {
    #[serde(default = "defaults::centralized_lr")]
    pub learning_rate: f64,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "defaults::grad_tol")]
    pub grad_tol: f64,
}

impl Default for CentralizedSection {
    fn default() -> Self {
        let cfg = CentralizedConfig::default();
        Self {
            learning_rate: cfg.learning_rate,
            max_iterations: cfg.max_iterations,
            grad_tol: cfg.grad_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Equal-count bins of the conditional-mean estimator.
    #[serde(default = "defaults::n_bins")]
    pub n_bins: usize,
    /// Per-producer trigger threshold: this quantile of in-sample index values.
    #[serde(default = "defaults::z0_quantile")]
    pub z0_quantile: f64,
    #[serde(default = "defaults::band_lower")]
    pub band_lower: f64,
    #[serde(default = "defaults::band_upper")]
    pub band_upper: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_bins: defaults::n_bins(),
            z0_quantile: defaults::z0_quantile(),
            band_lower: defaults::band_lower(),
            band_upper: defaults::band_upper(),
        }
    }
}

mod defaults {
    use fedindex::eval::CentralizedConfig;
    use fedindex::protocol::{FedOptConfig, LocalUpdateConfig};
    use fedindex::synth::PopulationSpec;
    use std::path::PathBuf;

    pub fn rounds() -> u64 {
        50
    }
    pub fn n_runs() -> usize {
        10
    }
    pub fn init_coeff() -> f64 {
        fedindex::DEFAULT_INIT_COEFF
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn n_producers() -> usize {
        PopulationSpec::default().n_producers
    }
    pub fn n_obs_per_producer() -> usize {
        PopulationSpec::default().n_obs_per_producer
    }
    pub fn j_covariates() -> usize {
        PopulationSpec::default().j_covariates
    }
    pub fn coeff_jitter() -> f64 {
        PopulationSpec::default().coeff_jitter
    }
    pub fn intercept_range() -> (f64, f64) {
        PopulationSpec::default().intercept_range
    }
    pub fn p_range() -> (f64, f64) {
        PopulationSpec::default().p_range
    }
    pub fn q_range() -> (f64, f64) {
        PopulationSpec::default().q_range
    }
    pub fn phi_range() -> (f64, f64) {
        PopulationSpec::default().phi_range
    }
    pub fn weight_range() -> (f64, f64) {
        PopulationSpec::default().weight_range
    }
    pub fn shift() -> f64 {
        PopulationSpec::default().covariates.shift
    }

    pub fn aggregator_kind() -> String {
        "fedavg".into()
    }
    pub fn server_lr() -> f64 {
        FedOptConfig::default().server_lr
    }
    pub fn beta1() -> f64 {
        FedOptConfig::default().beta1
    }
    pub fn beta2() -> f64 {
        FedOptConfig::default().beta2
    }
    pub fn epsilon() -> f64 {
        FedOptConfig::default().epsilon
    }

    pub fn epochs() -> usize {
        LocalUpdateConfig::default().epochs
    }
    pub fn batch_size() -> usize {
        LocalUpdateConfig::default().batch_size
    }
    pub fn learning_rate() -> f64 {
        LocalUpdateConfig::default().learning_rate
    }
    pub fn prox_beta() -> f64 {
        LocalUpdateConfig::default().prox_beta
    }
    // Deliberately above the library default: the gradient factor mu^(-q)
    // is unbounded as the index nears the clamp, and a floor this size
    // keeps SGD stable on populations whose index values can reach zero.
    pub fn floor() -> f64 {
        0.05
    }

    pub fn centralized_lr() -> f64 {
        CentralizedConfig::default().learning_rate
    }
    pub fn max_iterations() -> usize {
        CentralizedConfig::default().max_iterations
    }
    pub fn grad_tol() -> f64 {
        CentralizedConfig::default().grad_tol
    }

    pub fn n_bins() -> usize {
        20
    }
    pub fn z0_quantile() -> f64 {
        0.5
    }
    pub fn band_lower() -> f64 {
        0.05
    }
    pub fn band_upper() -> f64 {
        0.95
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Load, apply defaults, resolve relative paths against the config file's
/// directory, and validate.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let (Some(dir), Some(pop_path)) = (path.parent(), cfg.population_path.as_mut()) {
        if pop_path.is_relative() {
            *pop_path = dir.join(&pop_path);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.rounds == 0 {
            return Err(config_err("rounds: must be at least 1"));
        }
        if self.n_runs < 2 {
            return Err(config_err(
                "n_runs: need at least 2 runs to form confidence bands",
            ));
        }
        if !self.init_coeff.is_finite() || self.init_coeff <= 0.0 {
            return Err(config_err(format!(
                "init_coeff: must be a positive finite real, got {}",
                self.init_coeff
            )));
        }
        if self.population.is_some() && self.population_path.is_some() {
            return Err(config_err(
                "population and population_path are mutually exclusive; keep one",
            ));
        }
        if let Some(path) = &self.population_path {
            if !path.is_file() {
                return Err(config_err(format!(
                    "population_path: {} does not exist",
                    path.display()
                )));
            }
        }
        // Materialize the inner configs so their own validation runs now.
        if self.population_path.is_none() {
            self.population_spec()?;
        }
        self.aggregator()?;
        self.local_update()?
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        self.centralized(None)?;
        let eval = &self.evaluation;
        if eval.n_bins == 0 {
            return Err(config_err("evaluation.n_bins: must be at least 1"));
        }
        if !(0.0..=1.0).contains(&eval.z0_quantile) {
            return Err(config_err("evaluation.z0_quantile: must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&eval.band_lower)
            || !(0.0..=1.0).contains(&eval.band_upper)
            || eval.band_lower > eval.band_upper
        {
            return Err(config_err(
                "evaluation bands: need 0 <= band_lower <= band_upper <= 1",
            ));
        }
        for (name, coeffs) in &self.baselines {
            if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                return Err(config_err(format!(
                    "baselines.{name}: must be a nonempty vector of finite reals"
                )));
            }
        }
        Ok(())
    }

    /// The population spec with all defaults applied.
    pub fn population_spec(&self) -> Result<PopulationSpec, CliError> {
        let section = self.population.clone().unwrap_or_default();
        let dim = section.j_covariates;
        let base_coeffs = match &section.base_coeffs {
            Some(coeffs) => {
                if coeffs.len() != dim {
                    return Err(config_err(format!(
                        "population.base_coeffs: expected {dim} entries, got {}",
                        coeffs.len()
                    )));
                }
                coeffs.clone()
            }
            None if dim == 2 => vec![0.5, 0.3],
            None => {
                return Err(config_err(
                    "population.base_coeffs: required when j_covariates != 2",
                ))
            }
        };
        let covariates = match &section.covariates {
            None => CovariateModel::standard(dim),
            Some(cov) => {
                let mut model = CovariateModel::standard(dim);
                if let Some(mean) = &cov.mean {
                    model.mean = mean.clone();
                }
                if let Some(covariance) = &cov.covariance {
                    model.covariance = covariance.clone();
                }
                model.shift = cov.shift;
                model
            }
        };
        let spec = PopulationSpec {
            n_producers: section.n_producers,
            n_obs_per_producer: section.n_obs_per_producer,
            j_covariates: dim,
            base_coeffs,
            coeff_jitter: section.coeff_jitter,
            intercept_range: section.intercept_range,
            p_range: section.p_range,
            q_range: section.q_range,
            phi_range: section.phi_range,
            weight_range: section.weight_range,
            covariates,
        };
        spec.validate()
            .map_err(|e| config_err(format!("population.{e}")))?;
        Ok(spec)
    }

    pub fn aggregator(&self) -> Result<AggregatorConfig, CliError> {
        let section = &self.aggregator;
        match section.kind.as_str() {
            "fedavg" | "fedprox" => {
                if section.fedopt.is_some() {
                    return Err(config_err(format!(
                        "aggregator.fedopt: only valid when kind = \"fedopt\", kind is \"{}\"",
                        section.kind
                    )));
                }
                Ok(if section.kind == "fedavg" {
                    AggregatorConfig::FedAvg
                } else {
                    AggregatorConfig::FedProx
                })
            }
            "fedopt" => {
                let adam = section
                    .fedopt
                    .clone()
                    .map_or_else(FedOptConfig::default, |s| FedOptConfig {
                        server_lr: s.server_lr,
                        beta1: s.beta1,
                        beta2: s.beta2,
                        epsilon: s.epsilon,
                    });
                adam.validate()
                    .map_err(|e| config_err(format!("aggregator.fedopt: {e}")))?;
                Ok(AggregatorConfig::FedOpt(adam))
            }
            other => Err(config_err(format!(
                "aggregator.kind: must be one of fedavg, fedprox, fedopt; got \"{other}\""
            ))),
        }
    }

    pub fn local_update(&self) -> Result<LocalUpdateConfig, CliError> {
        Ok(LocalUpdateConfig {
            epochs: self.local.epochs,
            batch_size: self.local.batch_size,
            learning_rate: self.local.learning_rate,
            prox_beta: self.local.prox_beta,
            floor: self.local.floor,
        })
    }

    pub fn centralized(
        &self,
        init: Option<IndexCoefficients>,
    ) -> Result<CentralizedConfig, CliError> {
        let cfg = CentralizedConfig {
            init,
            learning_rate: self.centralized.learning_rate,
            max_iterations: self.centralized.max_iterations,
            grad_tol: self.centralized.grad_tol,
            floor: self.local.floor,
        };
        if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
            return Err(config_err(
                "centralized.learning_rate: must be a positive finite real",
            ));
        }
        if !(cfg.grad_tol.is_finite() && cfg.grad_tol > 0.0) {
            return Err(config_err(
                "centralized.grad_tol: must be a positive finite real",
            ));
        }
        Ok(cfg)
    }

    /// The config echoed for provenance: defaults materialized so the file
    /// alone reproduces the run.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut resolved = self.clone();
        if resolved.population_path.is_none() && resolved.population.is_none() {
            resolved.population = Some(PopulationSection::default());
        }
        resolved
    }
}
