//! Shared test oracles, independent of the library's closed forms.

#![allow(dead_code)]

use fedindex::index::{local_risk, IndexCoefficients, Observation, ProducerDataset};
use fedindex::synth::{CovariateModel, PopulationSpec};
use fedindex::tweedie::TweedieParams;

/// Tanh-sinh quadrature of `f` over `[a, b]`.
///
/// Double-exponential node spacing keeps every evaluation strictly inside
/// the interval, so integrable endpoint singularities (here `t^(1-q)` at
/// `t = 0`) are handled without special-casing. Nodes are addressed by
/// their distance to the endpoints, which stays accurate long after
/// `tanh` saturates to 1 in double precision.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let half_pi = std::f64::consts::FRAC_PI_2;

    let evaluate = |h: f64| -> f64 {
        let mut sum = half_pi * f(center);
        let mut k = 1i64;
        loop {
            let u = k as f64 * h;
            let big = half_pi * u.sinh();
            let grow = (2.0 * big).exp();
            if !grow.is_finite() {
                break;
            }
            // half * (1 - tanh(big)) without cancellation
            let distance = half * 2.0 / (grow + 1.0);
            if distance <= 0.0 {
                break;
            }
            let decay = (-2.0 * big).exp();
            let sech_sq = 4.0 * decay / ((1.0 + decay) * (1.0 + decay));
            let weight = half_pi * u.cosh() * sech_sq;
            if weight <= 0.0 {
                break;
            }
            let term = weight * (f(b - distance) + f(a + distance));
            sum += term;
            if u > 3.0 && term.abs() <= 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            k += 1;
            if k > 200_000 {
                break;
            }
        }
        sum * h * half
    };

    let mut h = 0.5;
    let mut previous = evaluate(h);
    for _ in 0..10 {
        h *= 0.5;
        let current = evaluate(h);
        if (current - previous).abs() <= tol * current.abs().max(1.0) {
            return current;
        }
        previous = current;
    }
    previous
}

/// Independent deviance oracle: `2 * integral from mu to x of (x-t) t^(-q) dt`
/// by numerical quadrature.
pub fn deviance_by_quadrature(x: f64, mu: f64, q: f64) -> f64 {
    let integrand = |t: f64| (x - t) * t.powf(-q);
    if x >= mu {
        2.0 * tanh_sinh(integrand, mu, x, 1e-12)
    } else {
        -2.0 * tanh_sinh(integrand, x, mu, 1e-12)
    }
}

/// Central finite differences of the local empirical risk in each
/// coefficient coordinate.
pub fn finite_difference_risk_gradient(
    coeffs: &IndexCoefficients,
    data: &ProducerDataset,
    floor: f64,
    step: f64,
) -> Vec<f64> {
    let values = coeffs.sensitivities();
    (0..values.len())
        .map(|j| {
            let mut plus = values.to_vec();
            plus[j] += step;
            let mut minus = values.to_vec();
            minus[j] -= step;
            let risk_plus =
                local_risk(&IndexCoefficients::new(plus).unwrap(), data, floor).unwrap();
            let risk_minus =
                local_risk(&IndexCoefficients::new(minus).unwrap(), data, floor).unwrap();
            (risk_plus - risk_minus) / (2.0 * step)
        })
        .collect()
}

pub fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A population where every producer shares the same structural parameters.
pub fn homogeneous_spec(
    n_producers: usize,
    n_obs: usize,
    base_coeffs: Vec<f64>,
    p: f64,
    q: f64,
    phi: f64,
) -> PopulationSpec {
    let dim = base_coeffs.len();
    PopulationSpec {
        n_producers,
        n_obs_per_producer: n_obs,
        j_covariates: dim,
        base_coeffs,
        coeff_jitter: 0.0,
        intercept_range: (0.0, 0.0),
        p_range: (p, p),
        q_range: (q, q),
        phi_range: (phi, phi),
        weight_range: (1.0, 1.0),
        covariates: CovariateModel::standard(dim),
    }
}

/// Small dataset helper for hand-built scenarios.
pub fn dataset_from(
    id: u64,
    rows: &[(f64, Vec<f64>)],
    params: TweedieParams,
    weight: f64,
) -> ProducerDataset {
    let observations = rows
        .iter()
        .map(|(loss, covariates)| Observation {
            loss: *loss,
            covariates: covariates.clone(),
        })
        .collect();
    ProducerDataset::new(id, observations, params, weight).unwrap()
}
