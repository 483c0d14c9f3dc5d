//! Sampling and inverse CDFs for the supported marginal laws.

use rand::Rng;
use rand_distr::{Distribution as _, Gamma, StandardNormal};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc_inv;

use super::ScenarioError;
use crate::model::{std_normal_cdf, Distribution, DistributionSpec};

/// Absolute tolerance of numerically inverted CDFs (on the unit scale).
pub const INVERSE_CDF_TOL: f64 = 1e-10;

const MAX_INVERSE_ITERS: usize = 200;

/// One Beta(a, b) draw on (0, 1) from the ratio of two Gamma draws.
pub fn beta_draw<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64, ScenarioError> {
    let ga = Gamma::new(a, 1.0).map_err(|_| ScenarioError::Shape { a, b })?;
    let gb = Gamma::new(b, 1.0).map_err(|_| ScenarioError::Shape { a, b })?;
    loop {
        let x: f64 = ga.sample(rng);
        let y: f64 = gb.sample(rng);
        let s = x + y;
        if s > 0.0 {
            return Ok(x / s);
        }
    }
}

/// Normal(mean, sigma) truncated to `[lo, hi]`, by rejection while the
/// retained mass is large and by inversion otherwise.
pub fn truncated_normal_draw<R: Rng + ?Sized>(mean: f64, sigma: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let (za, zb) = ((lo - mean) / sigma, (hi - mean) / sigma);
    let mass = std_normal_cdf(zb) - std_normal_cdf(za);
    if mass >= 0.25 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= za && z <= zb {
                return mean + sigma * z;
            }
        }
    }
    let u: f64 = rng.random();
    truncated_normal_quantile(mean, sigma, lo, hi, u)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

pub fn truncated_normal_quantile(mean: f64, sigma: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let (ca, cb) = (std_normal_cdf((lo - mean) / sigma), std_normal_cdf((hi - mean) / sigma));
    let z = std_normal_quantile(ca + u * (cb - ca));
    (mean + sigma * z).clamp(lo, hi)
}

/// Regularized incomplete beta inverse by safeguarded Newton iteration.
pub fn beta_quantile(a: f64, b: f64, p: f64) -> Result<f64, ScenarioError> {
    if p <= 0.0 {
        return Ok(0.0);
    }
    if p >= 1.0 {
        return Ok(1.0);
    }
    let lnb = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = a / (a + b);
    for _ in 0..MAX_INVERSE_ITERS {
        let f = beta_reg(a, b, x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let log_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - lnb;
        let pdf = log_pdf.exp();
        let mut next = x - f / pdf;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step < 1e-3 * INVERSE_CDF_TOL || hi - lo < INVERSE_CDF_TOL {
            return Ok(x);
        }
    }
    Err(ScenarioError::InverseCdf { a, b, p })
}

impl DistributionSpec {
    /// Draws one value in MW.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ScenarioError> {
        let s = self.support;
        Ok(match self.kind {
            Distribution::Beta { a, b } => (s.lo + s.width() * beta_draw(a, b, rng)?).clamp(s.lo, s.hi),
            Distribution::TruncatedNormal { mean, sigma } => truncated_normal_draw(mean, sigma, s.lo, s.hi, rng),
            Distribution::PointMass { value } => value,
        })
    }

    /// Maps a unit-interval point through the inverse CDF, in MW.
    pub fn quantile(&self, u: f64) -> Result<f64, ScenarioError> {
        let s = self.support;
        Ok(match self.kind {
            Distribution::Beta { a, b } => (s.lo + s.width() * beta_quantile(a, b, u)?).clamp(s.lo, s.hi),
            Distribution::TruncatedNormal { mean, sigma } => truncated_normal_quantile(mean, sigma, s.lo, s.hi, u),
            Distribution::PointMass { value } => value,
        })
    }

    /// Analytic CDF at `x` MW.
    pub fn cdf(&self, x: f64) -> f64 {
        let s = self.support;
        if x < s.lo {
            return 0.0;
        }
        if x >= s.hi {
            return 1.0;
        }
        match self.kind {
            Distribution::Beta { a, b } => beta_reg(a, b, (x - s.lo) / s.width()),
            Distribution::TruncatedNormal { mean, sigma } => {
                let ca = std_normal_cdf((s.lo - mean) / sigma);
                let cb = std_normal_cdf((s.hi - mean) / sigma);
                (std_normal_cdf((x - mean) / sigma) - ca) / (cb - ca)
            }
            Distribution::PointMass { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}
