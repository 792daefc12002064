//! Compound Poisson-gamma (Tweedie) losses: parameter validation, unit
//! deviance, its mean derivative, and sampling.
//!
//! For variance power `q` in the open interval `(1, 2)` the distribution is
//! continuous on the positive half-line with a point mass at zero, which is
//! what makes it a natural model for daily financial losses that are often
//! exactly zero. The deviance here is the standard Tweedie unit deviance
//!
//! ```text
//! d(x, mu) = 2 * [ x^(2-q) / ((1-q)(2-q)) - x * mu^(1-q) / (1-q) + mu^(2-q) / (2-q) ]
//! ```
//!
//! equal to `2 * integral from mu to x of (x - t) * t^(-q) dt`, nonnegative,
//! and zero exactly at `x = mu`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

/// Producer-private dispersion triple: link exponent `p`, variance power `q`
/// and dispersion `phi`.
///
/// `p > 0`, `1 < q < 2` and `phi > 0` are enforced at construction; the
/// boundary cases `q = 1` (Poisson) and `q = 2` (gamma) are rejected.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TweedieParams {
    p: f64,
    q: f64,
    phi: f64,
}

impl TweedieParams {
    pub fn new(p: f64, q: f64, phi: f64) -> Result<Self> {
        if !p.is_finite() || p <= 0.0 {
            return Err(Error::invalid(
                "p",
                format!("must be a positive finite real, got {p}"),
            ));
        }
        if !q.is_finite() || q <= 1.0 || q >= 2.0 {
            return Err(Error::invalid(
                "q",
                format!("must lie inside the open interval (1, 2), got {q}"),
            ));
        }
        if !phi.is_finite() || phi <= 0.0 {
            return Err(Error::invalid(
                "phi",
                format!("must be a positive finite real, got {phi}"),
            ));
        }
        Ok(Self { p, q, phi })
    }

    /// Link exponent mapping the index to the conditional mean.
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Variance power.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Dispersion.
    pub fn phi(&self) -> f64 {
        self.phi
    }
}

fn check_observation(x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain(format!(
            "observed loss must be a nonnegative finite real, got {x}"
        )));
    }
    Ok(())
}

fn check_mean(mu: f64) -> Result<()> {
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::domain(format!(
            "fitted mean must be a positive finite real, got {mu}"
        )));
    }
    Ok(())
}

/// Unit deviance `d(x, mu)` for variance power `q` in `(1, 2)`.
///
/// Nonnegative, zero iff `x = mu`. `x = 0` is valid: the `x`-dependent terms
/// vanish continuously and only `2 * mu^(2-q) / (2-q)` remains.
pub fn unit_deviance(x: f64, mu: f64, q: f64) -> Result<f64> {
    check_observation(x)?;
    check_mean(mu)?;
    if !q.is_finite() || q <= 1.0 || q >= 2.0 {
        return Err(Error::domain(format!(
            "variance power must lie inside the open interval (1, 2), got {q}"
        )));
    }
    Ok(unit_deviance_unchecked(x, mu, q))
}

/// Deviance scaled by the producer dispersion, `d(x, mu) / phi`.
pub fn scaled_deviance(x: f64, mu: f64, params: &TweedieParams) -> Result<f64> {
    check_observation(x)?;
    check_mean(mu)?;
    Ok(unit_deviance_unchecked(x, mu, params.q) / params.phi)
}

/// Derivative of the scaled deviance with respect to the fitted mean:
/// `(2 / phi) * mu^(-q) * (mu - x)`.
pub fn deviance_dmu(x: f64, mu: f64, params: &TweedieParams) -> Result<f64> {
    check_observation(x)?;
    check_mean(mu)?;
    Ok(2.0 / params.phi * mu.powf(-params.q) * (mu - x))
}

fn unit_deviance_unchecked(x: f64, mu: f64, q: f64) -> f64 {
    let one_q = 1.0 - q; // in (-1, 0)
    let two_q = 2.0 - q; // in (0, 1)
    let mu_pow1 = mu.powf(one_q);
    let mu_pow2 = mu_pow1 * mu;
    let value = 2.0 * (x.powf(two_q) / (one_q * two_q) - x * mu_pow1 / one_q + mu_pow2 / two_q);
    // Rounding can leave a value a few ulps below zero near x = mu.
    value.max(0.0)
}

/// Poisson rate, gamma shape and gamma scale of the compound representation
/// of a Tweedie draw with mean `mu`.
pub fn compound_parameters(mu: f64, params: &TweedieParams) -> Result<(f64, f64, f64)> {
    check_mean(mu)?;
    let q = params.q;
    let rate = mu.powf(2.0 - q) / (params.phi * (2.0 - q));
    let shape = (2.0 - q) / (q - 1.0);
    let scale = params.phi * (q - 1.0) * mu.powf(q - 1.0);
    Ok((rate, shape, scale))
}

/// Draw one loss with conditional mean `mu`: a Poisson number of i.i.d.
/// gamma claims, exactly zero when the count is zero.
pub fn tweedie_sample<R: Rng + ?Sized>(
    mu: f64,
    params: &TweedieParams,
    rng: &mut R,
) -> Result<f64> {
    let (rate, shape, scale) = compound_parameters(mu, params)?;
    let poisson = Poisson::new(rate)
        .map_err(|e| Error::domain(format!("invalid compound Poisson rate {rate}: {e}")))?;
    let count = poisson.sample(rng) as u64;
    if count == 0 {
        return Ok(0.0);
    }
    let gamma = Gamma::new(shape, scale)
        .map_err(|e| Error::domain(format!("invalid claim severity parameters: {e}")))?;
    Ok((0..count).map(|_| gamma.sample(rng)).sum())
}
