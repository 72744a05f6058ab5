//! Time-dependent Poisson demand generation and the rate-based demand
//! estimate used in the observation vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AmodError, Result};
use crate::mat::{IntMat, Mat};

/// Per-bin Poisson rates, lambda_ij in trips per time step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateTable {
    /// One N x N rate matrix per time bin.
    pub rates: Vec<Mat>,
    /// Time steps per bin.
    pub bin_length: usize,
}

impl RateTable {
    pub fn flat(rate: Mat, bin_length: usize) -> Self {
        RateTable {
            rates: vec![rate],
            bin_length,
        }
    }

    pub fn n_stations(&self) -> usize {
        self.rates[0].rows()
    }

    /// Number of time steps covered.
    pub fn coverage_steps(&self) -> usize {
        self.rates.len() * self.bin_length
    }

    pub fn bin_of(&self, t: usize) -> usize {
        t / self.bin_length
    }

    /// Rates in effect at step `t`, clamped to the last bin.
    pub fn rates_at(&self, t: usize) -> &Mat {
        let b = self.bin_of(t).min(self.rates.len() - 1);
        &self.rates[b]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.bin_length == 0 {
            return Err(AmodError::InvalidArgument(
                "rate table needs at least one bin of positive length".into(),
            ));
        }
        let n = self.n_stations();
        for m in &self.rates {
            if m.shape() != (n, n) {
                return Err(AmodError::InvalidArgument("rate bins differ in shape".into()));
            }
            if m.data().iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(AmodError::InvalidArgument("rates must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Trips requested this step, d_ij.
pub type DemandMatrix = IntMat;

/// Draw from Poisson(lambda). Inversion by sequential search below
/// lambda = 10, Atkinson's rejection method above.
pub fn poisson_sample<R: Rng>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(AmodError::InvalidArgument(format!(
            "poisson rate must be finite and nonnegative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda < 10.0 {
        // inversion: walk the CDF
        let l = (-lambda).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= rng.gen::<f64>();
            if p <= l {
                return Ok(k);
            }
            k += 1;
        }
    }
    // Atkinson's logistic rejection for large lambda
    let c = 0.767 - 3.36 / lambda;
    let beta = std::f64::consts::PI / (3.0 * lambda).sqrt();
    let alpha = beta * lambda;
    let k = c.ln() - lambda - beta.ln();
    loop {
        let u: f64 = rng.gen();
        let x = (alpha - ((1.0 - u) / u).ln()) / beta;
        let n = (x + 0.5).floor();
        if n < 0.0 {
            continue;
        }
        let v: f64 = rng.gen();
        let y = alpha - beta * x;
        let lhs = y + (v / (1.0 + y.exp()).powi(2)).ln();
        let rhs = k + n * lambda.ln() - crate::nn::special::lgamma(n + 1.0)?;
        if lhs <= rhs {
            return Ok(n as u64);
        }
    }
}

/// Independent Poisson draw per OD pair from the rates in effect at `t`.
pub fn sample_demand<R: Rng>(table: &RateTable, t: usize, rng: &mut R) -> Result<DemandMatrix> {
    if t >= table.coverage_steps() {
        return Err(AmodError::OutOfRange(format!(
            "step {t} beyond rate table coverage ({} steps)",
            table.coverage_steps()
        )));
    }
    let rates = table.rates_at(t);
    let n = rates.rows();
    let mut d = IntMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] = poisson_sample(rates[(i, j)], rng)? as i64;
        }
    }
    Ok(d)
}

/// The unbiased demand estimate for steps t .. t+horizon-1: the Poisson
/// rates themselves, clamped to the last bin past coverage. Optional
/// multiplicative log-normal noise is off by default.
pub fn estimate_demand(table: &RateTable, t: usize, horizon: usize) -> Vec<Mat> {
    (0..horizon).map(|h| table.rates_at(t + h).clone()).collect()
}

/// Noisy variant: each rate multiplied by exp(sigma * z - sigma^2 / 2)
/// with z standard normal, keeping the estimate unbiased.
pub fn estimate_demand_noisy<R: Rng>(
    table: &RateTable,
    t: usize,
    horizon: usize,
    sigma: f64,
    rng: &mut R,
) -> Vec<Mat> {
    estimate_demand(table, t, horizon)
        .into_iter()
        .map(|m| {
            m.map(|x| {
                let z: f64 = {
                    // Box-Muller
                    let u1: f64 = rng.gen::<f64>().max(1e-300);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                };
                x * (sigma * z - 0.5 * sigma * sigma).exp()
            })
        })
        .collect()
}
