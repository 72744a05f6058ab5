//! Dirichlet sampling via Marsaglia-Tsang gamma draws, plus the plain
//! (non-differentiable) log-density. The differentiable log-density lives
//! on the tape.

use rand::Rng;

use crate::error::{AmodError, Result};
use crate::nn::special::lgamma;
use crate::nn::tape::clamp_to_open_simplex;

/// Standard normal draw by Box-Muller. No caching, so the rng stream stays
/// easy to reason about.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gamma(shape, 1) by the Marsaglia-Tsang squeeze method, with the
/// boost transform for shape < 1.
pub fn gamma_sample<R: Rng>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(AmodError::Domain(format!(
            "gamma shape must be positive, got {shape}"
        )));
    }
    if shape < 1.0 {
        let g = gamma_sample(shape + 1.0, rng)?;
        let u: f64 = rng.gen::<f64>().max(1e-300);
        return Ok(g * u.powf(1.0 / shape));
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.gen();
        // squeeze, then the full acceptance test
        if u < 1.0 - 0.0331 * x.powi(4) {
            return Ok(d * v);
        }
        if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return Ok(d * v);
        }
    }
}

/// Draw from Dir(alpha): independent gammas, normalized.
pub fn dirichlet_sample<R: Rng>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(AmodError::Domain(
            "dirichlet concentrations must be strictly positive".into(),
        ));
    }
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| gamma_sample(a, rng))
        .collect::<Result<_>>()?;
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // all gammas underflowed; fall back to the mean direction
        let a0: f64 = alpha.iter().sum();
        return Ok(alpha.iter().map(|&a| a / a0).collect());
    }
    Ok(draws.into_iter().map(|g| g / total).collect())
}

/// log Dir(a | alpha) with the action clamped into the open simplex.
pub fn dirichlet_log_prob_value(alpha: &[f64], action: &[f64]) -> Result<f64> {
    if alpha.len() != action.len() {
        return Err(AmodError::InvalidArgument(
            "alpha and action length mismatch".into(),
        ));
    }
    if alpha.iter().any(|&a| a <= 0.0) {
        return Err(AmodError::Domain("alpha must be strictly positive".into()));
    }
    let action = clamp_to_open_simplex(action);
    let alpha0: f64 = alpha.iter().sum();
    let mut lp = lgamma(alpha0)?;
    for (&ai, &xi) in alpha.iter().zip(&action) {
        lp += (ai - 1.0) * xi.ln() - lgamma(ai)?;
    }
    Ok(lp)
}

/// alpha / sum(alpha).
pub fn dirichlet_mean(alpha: &[f64]) -> Vec<f64> {
    let a0: f64 = alpha.iter().sum();
    alpha.iter().map(|&a| a / a0).collect()
}
