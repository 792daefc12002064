//! The four subcommands and their file outputs.
//!
//! Every command echoes the fully resolved configuration into the output
//! directory so a run can be reproduced from its artifacts alone. All
//! numeric outputs are deterministic for a fixed master seed; wall-clock
//! timestamps live only in `run.log`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use fedindex::eval::{
    basis_risk, centralized_fit, conditional_mean_estimator, derive_run_seeds, index_quantile,
    monte_carlo_runs_with, recovery_error, summarize_runs, BasisRiskReport, CentralizedFit,
    MonteCarloSummary,
};
use fedindex::io::{load_population, save_population, write_traces_csv};
use fedindex::protocol::RoundTrace;
use fedindex::synth::{datasets, generate_population, GeneratedProducer};
use fedindex::{IndexCoefficients, ProducerDataset};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Generate,
    Train,
    Evaluate,
    Report,
}

/// Per-coefficient-set basis-risk block of `basis_risk.json`.
#[derive(Debug, Serialize)]
struct CoefficientSetReport {
    coefficients: Vec<f64>,
    reports: Vec<BasisRiskReport>,
}

#[derive(Debug, Serialize)]
struct BasisRiskFile {
    n_bins: usize,
    z0_quantile: f64,
    sets: BTreeMap<String, CoefficientSetReport>,
}

#[derive(Debug, Serialize)]
struct FittedFile {
    /// Monte Carlo mean of the coefficients at the final round.
    coefficients: Vec<f64>,
    /// Final coefficients of each run.
    per_run: Vec<Vec<f64>>,
    /// L2 distance to the population-level generating coefficients.
    recovery_error_vs_base: f64,
}

#[derive(Debug, Serialize)]
struct OracleFile {
    fit: CentralizedFit,
    recovery_error_vs_base: f64,
}

pub fn run_command(verb: Verb, cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    fs::create_dir_all(out_dir)?;
    write_resolved_config(cfg, out_dir)?;

    let population = obtain_population(cfg)?;
    log::info!(
        "population ready: {} producers x {} observations",
        population.len(),
        population[0].dataset.observations().len()
    );

    match verb {
        Verb::Generate => {
            save_population(&out_dir.join("population.txt"), &population)?;
            log::info!("population written, no training requested");
        }
        Verb::Train => {
            train(cfg, &population, out_dir)?;
        }
        Verb::Evaluate => {
            if cfg.baselines.is_empty() {
                return Err(CliError::Config(
                    "evaluate needs at least one [baselines] entry".into(),
                ));
            }
            let sets = baseline_sets(cfg, &population)?;
            write_basis_risk(cfg, &population, sets, out_dir)?;
        }
        Verb::Report => {
            save_population(&out_dir.join("population.txt"), &population)?;
            let fitted = train(cfg, &population, out_dir)?;
            let clients = datasets(&population);
            let oracle = oracle_fit(cfg, &population, &clients, out_dir)?;
            let mut sets = baseline_sets(cfg, &population)?;
            sets.insert("fitted".into(), fitted);
            sets.insert("oracle".into(), oracle.coeffs.sensitivities().to_vec());
            write_basis_risk(cfg, &population, sets, out_dir)?;
        }
    }

    write_run_log(verb, out_dir, started)?;
    Ok(())
}

fn obtain_population(cfg: &ExperimentConfig) -> Result<Vec<GeneratedProducer>, CliError> {
    match &cfg.population_path {
        Some(path) => {
            log::info!("loading population from {}", path.display());
            Ok(load_population(path)?)
        }
        None => {
            let spec = cfg.population_spec()?;
            log::info!("generating population with master seed {}", cfg.master_seed);
            Ok(generate_population(&spec, cfg.master_seed)?)
        }
    }
}

/// Train, write traces/summary/fitted files, and return the fitted
/// coefficients (the Monte Carlo mean at the final round).
fn train(
    cfg: &ExperimentConfig,
    population: &[GeneratedProducer],
    out_dir: &Path,
) -> Result<Vec<f64>, CliError> {
    let clients = datasets(population);
    let dim = clients[0].dim();
    let init = IndexCoefficients::constant(dim, cfg.init_coeff)?;
    let agg = cfg.aggregator()?;
    let local_cfg = cfg.local_update()?;
    let run_seeds = derive_run_seeds(cfg.master_seed, cfg.n_runs);

    log::info!(
        "training: {} aggregator, {} rounds x {} runs",
        agg.name(),
        cfg.rounds,
        cfg.n_runs
    );
    let runs = monte_carlo_runs_with(&init, &clients, &agg, &local_cfg, cfg.rounds, &run_seeds)?;
    write_traces_csv(&out_dir.join("traces.csv"), &runs)?;

    let summary = summarize_runs(&runs, cfg.evaluation.band_lower, cfg.evaluation.band_upper)?;
    write_json(&out_dir.join("summary.json"), &summary)?;

    let fitted = fitted_coefficients(&summary);
    let fitted_index = IndexCoefficients::new(fitted.clone())?;
    let base = cfg
        .population
        .as_ref()
        .and_then(|p| p.base_coeffs.clone())
        .unwrap_or_else(|| vec![0.5, 0.3]);
    let recovery = if base.len() == dim {
        recovery_error(&fitted_index, &base)?
    } else {
        f64::NAN
    };
    let file = FittedFile {
        coefficients: fitted.clone(),
        per_run: runs
            .iter()
            .map(|r| trace_final(r).coeffs_after.sensitivities().to_vec())
            .collect(),
        recovery_error_vs_base: recovery,
    };
    write_json(&out_dir.join("fitted.json"), &file)?;
    log::info!("fitted coefficients (Monte Carlo mean): {fitted:?}");
    Ok(fitted)
}

fn trace_final(run: &[RoundTrace]) -> &RoundTrace {
    run.last().expect("runs have at least one round")
}

fn fitted_coefficients(summary: &MonteCarloSummary) -> Vec<f64> {
    summary
        .coeffs
        .last()
        .expect("at least one round")
        .iter()
        .map(|point| point.mean)
        .collect()
}

fn oracle_fit(
    cfg: &ExperimentConfig,
    population: &[GeneratedProducer],
    clients: &[ProducerDataset],
    out_dir: &Path,
) -> Result<CentralizedFit, CliError> {
    let dim = clients[0].dim();
    let init = IndexCoefficients::constant(dim, cfg.init_coeff)?;
    let centralized_cfg = cfg.centralized(Some(init))?;
    let fit = centralized_fit(clients, &centralized_cfg)?;
    log::info!(
        "oracle fit: {:?} after {} iterations, gradient norm {:.3e}",
        fit.status,
        fit.iterations,
        fit.grad_norm
    );
    let base: Vec<f64> = population[0].truth.coeffs.sensitivities().to_vec();
    let recovery = if base.len() == dim {
        recovery_error(&fit.coeffs, &base)?
    } else {
        f64::NAN
    };
    let file = OracleFile {
        fit: fit.clone(),
        recovery_error_vs_base: recovery,
    };
    write_json(&out_dir.join("oracle.json"), &file)?;
    Ok(fit)
}

fn baseline_sets(
    cfg: &ExperimentConfig,
    population: &[GeneratedProducer],
) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let dim = population[0].dataset.dim();
    let mut sets = BTreeMap::new();
    for (name, coeffs) in &cfg.baselines {
        if coeffs.len() != dim {
            return Err(CliError::Config(format!(
                "baselines.{name}: expected {dim} entries, got {}",
                coeffs.len()
            )));
        }
        sets.insert(name.clone(), coeffs.clone());
    }
    Ok(sets)
}

fn write_basis_risk(
    cfg: &ExperimentConfig,
    population: &[GeneratedProducer],
    sets: BTreeMap<String, Vec<f64>>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let n_bins = cfg.evaluation.n_bins;
    let z0_quantile = cfg.evaluation.z0_quantile;
    let mut file = BasisRiskFile {
        n_bins,
        z0_quantile,
        sets: BTreeMap::new(),
    };
    for (name, coefficients) in sets {
        let index = IndexCoefficients::new(coefficients.clone())?;
        let mut reports = Vec::with_capacity(population.len());
        for g in population {
            let producer = &g.dataset;
            let estimator = conditional_mean_estimator(producer, &index, n_bins)?;
            let z0 = index_quantile(producer, &index, z0_quantile)?;
            reports.push(basis_risk(producer, &index, &estimator, z0)?);
        }
        log::info!("basis risk computed for coefficient set \"{name}\"");
        file.sets.insert(
            name,
            CoefficientSetReport {
                coefficients,
                reports,
            },
        );
    }
    write_json(&out_dir.join("basis_risk.json"), &file)
}

fn write_resolved_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let resolved = cfg.resolved();
    let text = toml::to_string_pretty(&resolved)
        .map_err(|e| CliError::Config(format!("cannot serialize resolved config: {e}")))?;
    fs::write(out_dir.join("config.resolved.toml"), text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Wall-clock provenance; deliberately the only timestamped output.
fn write_run_log(verb: Verb, out_dir: &Path, started: Instant) -> Result<(), CliError> {
    let now_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let contents = format!(
        "command: {verb:?}\nfinished_unix_ms: {now_ms}\nelapsed_ms: {}\n",
        started.elapsed().as_millis()
    );
    fs::write(out_dir.join("run.log"), contents)?;
    Ok(())
}
