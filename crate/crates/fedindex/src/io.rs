//! Text formats: the versioned columnar population file and the CSV trace
//! layout.
//!
//! Population file, whitespace-separated:
//!
//! ```text
//! fedindex-population v1
//! producers <N>
//! covariates <J>
//! producer <id> weight <w> p <p> q <q> phi <phi> intercept <b> coeffs <a_1> ... <a_J> observations <n>
//! <loss> <mean> <y_1> ... <y_J>     (n lines)
//! ...
//! ```
//!
//! Trace CSV: header `round,run,global_loss,a_1,...,a_J`, one row per round
//! per run, runs contiguous. Reals are written with Rust's shortest
//! round-trip formatting, so save/load reproduces every value bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{IndexCoefficients, Observation, ProducerDataset};
use crate::protocol::RoundTrace;
use crate::synth::{GeneratedProducer, GeneratingTruth};
use crate::tweedie::TweedieParams;

const POPULATION_HEADER: &str = "fedindex-population v1";

/// Render a population, generating truth included.
pub fn population_to_string(producers: &[GeneratedProducer]) -> Result<String> {
    let first = producers.first().ok_or(Error::Empty("population"))?;
    let dim = first.dataset.dim();
    let mut out = String::new();
    let _ = writeln!(out, "{POPULATION_HEADER}");
    let _ = writeln!(out, "producers {}", producers.len());
    let _ = writeln!(out, "covariates {dim}");
    for g in producers {
        let params = g.dataset.params();
        let _ = write!(
            out,
            "producer {} weight {} p {} q {} phi {} intercept {}",
            g.dataset.id(),
            g.dataset.weight(),
            params.p(),
            params.q(),
            params.phi(),
            g.truth.coeffs.intercept().unwrap_or(0.0),
        );
        let _ = write!(out, " coeffs");
        for a in g.truth.coeffs.sensitivities() {
            let _ = write!(out, " {a}");
        }
        let _ = writeln!(out, " observations {}", g.dataset.observations().len());
        for (obs, mu) in g.dataset.observations().iter().zip(&g.truth.means) {
            let _ = write!(out, "{} {}", obs.loss, mu);
            for y in &obs.covariates {
                let _ = write!(out, " {y}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
        }
    }

    /// Next non-empty line with its 1-based number.
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Ok((idx + 1, trimmed));
            }
        }
        Err(Error::PopulationFormat {
            line: 0,
            reason: "unexpected end of file".into(),
        })
    }
}

fn bad_line(line: usize, reason: impl Into<String>) -> Error {
    Error::PopulationFormat {
        line,
        reason: reason.into(),
    }
}

fn parse_token<T: std::str::FromStr>(line: usize, token: Option<&str>, what: &str) -> Result<T> {
    let token = token.ok_or_else(|| bad_line(line, format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| bad_line(line, format!("cannot parse {what} from {token:?}")))
}

fn expect_keyword(line: usize, token: Option<&str>, keyword: &str) -> Result<()> {
    match token {
        Some(t) if t == keyword => Ok(()),
        other => Err(bad_line(
            line,
            format!("expected {keyword:?}, got {other:?}"),
        )),
    }
}

/// Parse a population file rendered by [`population_to_string`].
pub fn population_from_str(text: &str) -> Result<Vec<GeneratedProducer>> {
    let mut reader = LineReader::new(text);
    let (line, header) = reader.next_line()?;
    if header != POPULATION_HEADER {
        return Err(bad_line(
            line,
            format!("expected header {POPULATION_HEADER:?}"),
        ));
    }
    let (line, producers_line) = reader.next_line()?;
    let mut tokens = producers_line.split_whitespace();
    expect_keyword(line, tokens.next(), "producers")?;
    let n_producers: usize = parse_token(line, tokens.next(), "producer count")?;

    let (line, covariates_line) = reader.next_line()?;
    let mut tokens = covariates_line.split_whitespace();
    expect_keyword(line, tokens.next(), "covariates")?;
    let dim: usize = parse_token(line, tokens.next(), "covariate count")?;

    let mut producers = Vec::with_capacity(n_producers);
    for _ in 0..n_producers {
        let (line, head) = reader.next_line()?;
        let mut tokens = head.split_whitespace();
        expect_keyword(line, tokens.next(), "producer")?;
        let id: u64 = parse_token(line, tokens.next(), "producer id")?;
        expect_keyword(line, tokens.next(), "weight")?;
        let weight: f64 = parse_token(line, tokens.next(), "weight")?;
        expect_keyword(line, tokens.next(), "p")?;
        let p: f64 = parse_token(line, tokens.next(), "p")?;
        expect_keyword(line, tokens.next(), "q")?;
        let q: f64 = parse_token(line, tokens.next(), "q")?;
        expect_keyword(line, tokens.next(), "phi")?;
        let phi: f64 = parse_token(line, tokens.next(), "phi")?;
        expect_keyword(line, tokens.next(), "intercept")?;
        let intercept: f64 = parse_token(line, tokens.next(), "intercept")?;
        expect_keyword(line, tokens.next(), "coeffs")?;
        let mut sensitivities = Vec::with_capacity(dim);
        for j in 0..dim {
            sensitivities.push(parse_token(
                line,
                tokens.next(),
                &format!("coefficient {}", j + 1),
            )?);
        }
        expect_keyword(line, tokens.next(), "observations")?;
        let n_obs: usize = parse_token(line, tokens.next(), "observation count")?;
        if let Some(extra) = tokens.next() {
            return Err(bad_line(
                line,
                format!("unexpected trailing token {extra:?}"),
            ));
        }

        let params = TweedieParams::new(p, q, phi).map_err(|e| bad_line(line, e.to_string()))?;
        let coeffs = IndexCoefficients::with_intercept(sensitivities, intercept)
            .map_err(|e| bad_line(line, e.to_string()))?;

        let mut observations = Vec::with_capacity(n_obs);
        let mut means = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            let (line, row) = reader.next_line()?;
            let mut tokens = row.split_whitespace();
            let loss: f64 = parse_token(line, tokens.next(), "loss")?;
            let mean: f64 = parse_token(line, tokens.next(), "mean")?;
            let mut covariates = Vec::with_capacity(dim);
            for j in 0..dim {
                covariates.push(parse_token(
                    line,
                    tokens.next(),
                    &format!("covariate {}", j + 1),
                )?);
            }
            if let Some(extra) = tokens.next() {
                return Err(bad_line(
                    line,
                    format!("unexpected trailing token {extra:?}"),
                ));
            }
            observations.push(Observation { loss, covariates });
            means.push(mean);
        }
        let dataset = ProducerDataset::new(id, observations, params, weight)
            .map_err(|e| bad_line(line, e.to_string()))?;
        producers.push(GeneratedProducer {
            dataset,
            truth: GeneratingTruth { coeffs, means },
        });
    }
    Ok(producers)
}

pub fn save_population(path: &Path, producers: &[GeneratedProducer]) -> Result<()> {
    fs::write(path, population_to_string(producers)?)?;
    Ok(())
}

pub fn load_population(path: &Path) -> Result<Vec<GeneratedProducer>> {
    population_from_str(&fs::read_to_string(path)?)
}

/// Render Monte Carlo run traces as CSV.
pub fn traces_to_csv(runs: &[Vec<RoundTrace>]) -> Result<String> {
    let first = runs
        .iter()
        .flat_map(|r| r.first())
        .next()
        .ok_or(Error::Empty("trace list"))?;
    let dim = first.coeffs_after.dim();
    let mut out = String::from("round,run");
    out.push_str(",global_loss");
    for j in 1..=dim {
        let _ = write!(out, ",a_{j}");
    }
    out.push('\n');
    for (run, traces) in runs.iter().enumerate() {
        for trace in traces {
            let _ = write!(out, "{},{},{}", trace.round, run, trace.global_loss);
            for a in trace.coeffs_after.sensitivities() {
                let _ = write!(out, ",{a}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_traces_csv(path: &Path, runs: &[Vec<RoundTrace>]) -> Result<()> {
    fs::write(path, traces_to_csv(runs)?)?;
    Ok(())
}
