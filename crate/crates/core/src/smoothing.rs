//! The 0/1 indicator of a non-negative margin and its smooth parametric majorant
//!
//! ```text
//! Θ(τ, s) = (1 + m1·τ) / (1 + m2·τ·exp(-s/τ))
//! ```
//!
//! Θ is strictly increasing in `s`, bounded by `1 + m1·τ`, and with `m1 ≥ m2`
//! satisfies `Θ(τ, 0) ≥ 1`, hence `Θ ≥ I` everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SmoothingError {
    #[error("tau must lie in (0, 1), got {0}")]
    Tau(f64),
    #[error("need m1 >= m2 > 0, got m1 = {m1}, m2 = {m2}")]
    Weights { m1: f64, m2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub tau: f64,
    pub m1: f64,
    pub m2: f64,
}

impl SmoothingParams {
    pub fn new(tau: f64, m1: f64, m2: f64) -> Result<Self, SmoothingError> {
        let p = SmoothingParams { tau, m1, m2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SmoothingError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(SmoothingError::Tau(self.tau));
        }
        if !(self.m2 > 0.0 && self.m1 >= self.m2) || !self.m1.is_finite() {
            return Err(SmoothingError::Weights { m1: self.m1, m2: self.m2 });
        }
        Ok(())
    }

    pub fn with_tau(self, tau: f64) -> Self {
        SmoothingParams { tau, ..self }
    }

    /// Supremum of Θ, approached as s → +∞.
    pub fn ceiling(&self) -> f64 {
        1.0 + self.m1 * self.tau
    }
}

/// Beyond this value of -s/τ the direct form switches to the log domain.
const DIRECT_LIMIT: f64 = 300.0;

pub fn indicator(s: f64) -> f64 {
    if s >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Θ and ∂Θ/∂s at fixed parameters, with the constants hoisted out of the
/// per-sample loop; one exponential per evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    tau: f64,
    ceiling: f64,
    m2_tau: f64,
    ln_m2_tau: f64,
}

impl Kernel {
    pub fn new(p: &SmoothingParams) -> Self {
        Kernel { tau: p.tau, ceiling: p.ceiling(), m2_tau: p.m2 * p.tau, ln_m2_tau: (p.m2 * p.tau).ln() }
    }

    #[inline]
    pub fn theta(&self, s: f64) -> f64 {
        let t = -s / self.tau;
        if t <= DIRECT_LIMIT {
            self.ceiling / (1.0 + self.m2_tau * t.exp())
        } else {
            // c / (1 + e^w) with w = t + ln(m2 τ) > 0
            let e = (-(t + self.ln_m2_tau)).exp();
            self.ceiling * e / (1.0 + e)
        }
    }

    /// (Θ, ∂Θ/∂s); Θ is bitwise identical to [`Kernel::theta`].
    #[inline]
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let t = -s / self.tau;
        if t <= DIRECT_LIMIT {
            let q = self.m2_tau * t.exp();
            let d = 1.0 + q;
            (self.ceiling / d, self.ceiling / self.tau * q / (d * d))
        } else {
            let e = (-(t + self.ln_m2_tau)).exp();
            let d = 1.0 + e;
            (self.ceiling * e / d, self.ceiling / self.tau * e / (d * d))
        }
    }
}

pub fn theta(p: &SmoothingParams, s: f64) -> f64 {
    Kernel::new(p).theta(s)
}

/// ∂Θ/∂s = (1 + m1τ)/τ · q/(1 + q)², q = m2·τ·exp(-s/τ).
pub fn theta_ds(p: &SmoothingParams, s: f64) -> f64 {
    let w = -s / p.tau + (p.m2 * p.tau).ln();
    let e = (-w.abs()).exp();
    p.ceiling() / p.tau * e / ((1.0 + e) * (1.0 + e))
}

/// Θ and ∂Θ/∂s together.
#[inline]
pub fn theta_with_ds(p: &SmoothingParams, s: f64) -> (f64, f64) {
    Kernel::new(p).eval(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorantCheck {
    pub holds: bool,
    /// min over the grid of Θ(s) - I(s).
    pub worst_margin: f64,
    pub worst_at: f64,
}

/// Grid on [-50τ, 50τ] with `points` evenly spaced values.
pub fn standard_grid(p: &SmoothingParams, points: usize) -> Vec<f64> {
    let (lo, hi) = (-50.0 * p.tau, 50.0 * p.tau);
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Checks Θ ≥ I at every grid point; the grid should cover [-50τ, 50τ] with
/// spacing at most τ/10 and include s = 0.
pub fn check_majorant(p: &SmoothingParams, grid: &[f64]) -> MajorantCheck {
    let mut worst = MajorantCheck { holds: true, worst_margin: f64::INFINITY, worst_at: f64::NAN };
    for &s in grid.iter().chain(std::iter::once(&0.0)) {
        let m = theta(p, s) - indicator(s);
        if m < worst.worst_margin {
            worst.worst_margin = m;
            worst.worst_at = s;
        }
    }
    worst.holds = worst.worst_margin >= 0.0;
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(tau: f64, m1: f64, m2: f64) -> SmoothingParams {
        SmoothingParams { tau, m1, m2 }
    }

    #[test]
    fn indicator_values() {
        assert_eq!(indicator(0.0), 1.0);
        assert_eq!(indicator(-3.0), 0.0);
        assert_eq!(indicator(2.0), 1.0);
    }

    #[test]
    fn theta_reference_values() {
        let p = params(0.1, 0.9, 0.9);
        assert_eq!(theta(&p, 0.0), 1.0);
        assert!((theta(&p, 10.0) - 1.09).abs() < 1e-6);
        let q = params(0.5, 1.0, 1.0);
        let oracle = 1.5 / (1.0 + 0.5 * (-1.0f64).exp());
        assert!((theta(&q, 0.5) - oracle).abs() < 1e-12);
        assert!((theta(&q, 0.5) - 1.266956).abs() < 1e-5);
    }

    #[test]
    fn theta_is_finite_in_the_far_left_tail() {
        let p = params(1e-3, 1.0, 1.0);
        for s in [-1.0, -10.0, -1e6, -1e300] {
            let v = theta(&p, s);
            assert!(v.is_finite() && v >= 0.0);
            assert!(theta_ds(&p, s).is_finite());
        }
        // direct and log-domain branches agree across the switch
        let s_switch = -DIRECT_LIMIT * p.tau;
        let (a, b) = (theta(&p, s_switch * (1.0 - 1e-12)), theta(&p, s_switch * (1.0 + 1e-12)));
        assert!((a - b).abs() <= 1e-8 * a.max(b));
    }

    #[test]
    fn derivative_reference_values() {
        let p = params(0.3, 1.0, 1.0);
        assert!(theta_ds(&p, -1e6) <= 1e-12);
        let q = params(0.5, 1.0, 1.0);
        let h = 1e-6;
        let fd = (theta(&q, 0.5 + h) - theta(&q, 0.5 - h)) / (2.0 * h);
        assert!(((theta_ds(&q, 0.5) - fd) / fd).abs() <= 1e-6);
    }

    #[test]
    fn derivative_peak_location() {
        let p = params(0.1, 0.9, 0.9);
        let grid: Vec<f64> = (-20_000..=20_000).map(|i| i as f64 * 1e-4).collect();
        let peak = grid.iter().copied().fold((0.0, f64::MIN), |acc, s| {
            let d = theta_ds(&p, s);
            if d > acc.1 {
                (s, d)
            } else {
                acc
            }
        });
        assert!(peak.0.abs() <= p.tau * (p.m2 * p.tau).ln().abs() + p.tau, "peak at {}", peak.0);
    }

    #[test]
    fn majorant_examples() {
        let p = params(0.1, 1.0, 1.0);
        let c = check_majorant(&p, &standard_grid(&p, 10_001));
        assert!(c.holds);
        assert_eq!(c.worst_margin, 0.0);
        assert_eq!(c.worst_at, 0.0);

        let p = params(0.5, 0.5, 1.0);
        let c = check_majorant(&p, &standard_grid(&p, 10_001));
        assert!(!c.holds);
        assert!((theta(&p, 0.0) - 1.25 / 1.5).abs() < 1e-15);

        let p = params(0.3, 2.0, 1.0);
        let c = check_majorant(&p, &standard_grid(&p, 10_001));
        assert!(c.holds && c.worst_margin > 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(SmoothingParams::new(0.5, 1.0, 1.0).is_ok());
        assert_eq!(SmoothingParams::new(1.0, 1.0, 1.0), Err(SmoothingError::Tau(1.0)));
        assert!(SmoothingParams::new(0.5, 0.5, 1.0).is_err());
        assert!(SmoothingParams::new(0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn pointwise_limit_is_monotone() {
        for s in [-5.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 5.0] {
            let gaps: Vec<f64> =
                [0.5, 0.25, 0.1, 0.05, 0.01].iter().map(|&tau| (theta(&params(tau, 1.0, 1.0), s) - indicator(s)).abs()).collect();
            assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "s = {s}: {gaps:?}");
            assert!(gaps[4] < 0.011);
        }
    }

    #[test]
    fn paired_evaluation_matches_separate_calls() {
        let p = params(0.01, 1.0, 1.0);
        for s in [-10.0, -3.0, -2.9, -0.1, 0.0, 0.05, 1.0] {
            let (th, ds) = theta_with_ds(&p, s);
            assert_eq!(th, theta(&p, s));
            let d = theta_ds(&p, s);
            assert!((ds - d).abs() <= 1e-12 * d.max(1e-300), "s = {s}: {ds} vs {d}");
        }
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(tau in 1e-3f64..0.99, m2 in 0.05f64..3.0, extra in 0.0f64..2.0, s in -50.0f64..50.0, ds in 1e-6f64..1.0) {
            let p = params(tau, m2 + extra, m2);
            let (a, b) = (theta(&p, s), theta(&p, s + ds));
            prop_assert!(b >= a);
            prop_assert!(a >= 0.0 && b <= p.ceiling());
            if (s / tau).abs() < 30.0 {
                prop_assert!(theta_ds(&p, s) > 0.0);
                prop_assert!(a > 0.0 && a < p.ceiling());
            }
            prop_assert!(a >= indicator(s));
        }

        #[test]
        fn derivative_matches_central_differences(tau in 0.01f64..0.9, m2 in 0.1f64..2.0, extra in 0.0f64..1.0, z in -8.0f64..8.0) {
            let p = params(tau, m2 + extra, m2);
            let s = z * tau;
            // five-point stencil: the derivative is small relative to Θ in the tails
            let h = 1e-3 * tau;
            let f = |k: f64| theta(&p, s + k * h);
            let fd = (f(-2.0) - 8.0 * f(-1.0) + 8.0 * f(1.0) - f(2.0)) / (12.0 * h);
            let an = theta_ds(&p, s);
            prop_assert!(((an - fd) / an).abs() <= 1e-6, "an {} fd {}", an, fd);
        }
    }
}
