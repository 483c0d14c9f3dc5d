//! Box-constrained minimization with smooth inequality constraints
//! `c_i(x) ≤ 0`: an augmented Lagrangian outer loop around a projected
//! quasi-Newton inner loop, using objective and gradient evaluations only.

mod check;
mod continuation;
mod report;

pub use check::{grad_check, GradCheck};
pub use continuation::{continuation_solve, Bracket, BracketEntry, ContinuationResult};
pub use report::{minimize, ConstraintValue, SolveReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::saa::SaaError;

/// A value with its gradient with respect to the flat decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Objective, constraint values and their gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub constraints: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
}

pub trait Problem: Sync {
    fn dim(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn num_constraints(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Evaluation;

    fn constraint_names(&self) -> Vec<String> {
        (0..self.num_constraints()).map(|i| format!("c{i}")).collect()
    }

    /// Extra differentiable terms checked by [`grad_check`].
    fn auxiliary_terms(&self, _x: &[f64]) -> Vec<(String, ValueGrad)> {
        Vec::new()
    }

    /// Constraints that are not differentiable somewhere in `x ± steps`.
    fn kinked_constraints(&self, _x: &[f64], _steps: &[f64]) -> Vec<usize> {
        Vec::new()
    }
}

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("starting point outside the decision box: {0}")]
    StartOutsideBox(String),
    #[error("inner approximation infeasible at tau = {tau}; largest feasible alpha found: {best_alpha:?}")]
    Infeasible { tau: f64, best_alpha: Option<f64> },
    #[error(transparent)]
    Assembly(#[from] SaaError),
    #[error(transparent)]
    Flow(#[from] crate::dcflow::FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Tolerance on `c_i(x) ≤ 0`, dimensionless.
    pub constraint_tol: f64,
    /// Tolerance on the projected-gradient norm in box-scaled coordinates.
    pub stationarity_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub tau0: f64,
    pub decay: f64,
    pub tau_min: f64,
    /// Relative bracket gap at which continuation stops early.
    pub gap_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iterations: 40,
            max_inner_iterations: 300,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            tau0: 0.5,
            decay: 0.5,
            tau_min: 1e-3,
            gap_tol: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), NlpError> {
        let positive = [
            ("constraint_tol", self.constraint_tol),
            ("stationarity_tol", self.stationarity_tol),
            ("initial_penalty", self.initial_penalty),
            ("gap_tol", self.gap_tol),
            ("tau_min", self.tau_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NlpError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(NlpError::Config(format!("penalty_growth must be > 1, got {}", self.penalty_growth)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(NlpError::Config(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if !(self.tau_min < self.tau0 && self.tau0 < 1.0) {
            return Err(NlpError::Config(format!("need tau_min < tau0 < 1, got {} and {}", self.tau_min, self.tau0)));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return Err(NlpError::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }

    /// τ_k = tau0·decay^k while above tau_min, then tau_min itself.
    pub fn tau_schedule(&self) -> Vec<f64> {
        let mut taus = Vec::new();
        let mut t = self.tau0;
        while t > self.tau_min * (1.0 + 1e-12) {
            taus.push(t);
            t *= self.decay;
        }
        taus.push(self.tau_min);
        taus
    }
}

/// Result of [`minimize_box`] in the problem's own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub max_violation: f64,
    pub status: Status,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    /// Final multiplier estimates, in objective units.
    pub multipliers: Vec<f64>,
}

fn max_violation(c: &[f64]) -> f64 {
    c.iter().fold(0.0, |m, v| m.max(*v))
}

/// Maps the box to the unit cube so step sizes are comparable across variables.
struct Scaled<'a, P: Problem> {
    problem: &'a P,
    lo: Vec<f64>,
    width: Vec<f64>,
    fscale: f64,
    evaluations: usize,
}

impl<'a, P: Problem> Scaled<'a, P> {
    fn to_x(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.lo).zip(&self.width).map(|((z, l), w)| l + w * z).collect()
    }

    fn to_z(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.lo).zip(&self.width).map(|((x, l), w)| if *w > 0.0 { ((x - l) / w).clamp(0.0, 1.0) } else { 0.0 }).collect()
    }

    fn eval(&mut self, z: &[f64]) -> Evaluation {
        self.evaluations += 1;
        let x = self.to_x(z);
        let mut e = self.problem.evaluate(&x);
        e.objective /= self.fscale;
        for (g, w) in e.gradient.iter_mut().zip(&self.width) {
            *g *= w / self.fscale;
        }
        for row in &mut e.jacobian {
            for (g, w) in row.iter_mut().zip(&self.width) {
                *g *= w;
            }
        }
        e
    }
}

/// Augmented Lagrangian (PHR form for `c ≤ 0`) and its gradient.
fn lagrangian(e: &Evaluation, lambda: &[f64], rho: f64) -> (f64, Vec<f64>) {
    let mut value = e.objective;
    let mut grad = e.gradient.clone();
    for ((c, row), l) in e.constraints.iter().zip(&e.jacobian).zip(lambda) {
        let shifted = l + rho * c;
        if shifted > 0.0 {
            value += (shifted * shifted - l * l) / (2.0 * rho);
            for (g, j) in grad.iter_mut().zip(row) {
                *g += shifted * j;
            }
        } else {
            value -= l * l / (2.0 * rho);
        }
    }
    (value, grad)
}

fn projected_gradient_norm(z: &[f64], g: &[f64], width: &[f64]) -> f64 {
    z.iter().zip(g).zip(width).map(|((z, g), w)| if *w > 0.0 { ((z - g).clamp(0.0, 1.0) - z).abs() } else { 0.0 }).fold(0.0, f64::max)
}

struct Incumbent {
    z: Vec<f64>,
    eval: Evaluation,
}

/// Tracks the lowest-objective point within the constraint tolerance.
fn consider(best: &mut Option<Incumbent>, z: &[f64], e: &Evaluation, tol: f64) {
    if max_violation(&e.constraints) > tol {
        return;
    }
    if best.as_ref().is_none_or(|b| e.objective < b.eval.objective) {
        *best = Some(Incumbent { z: z.to_vec(), eval: e.clone() });
    }
}

struct InnerOutcome {
    z: Vec<f64>,
    eval: Evaluation,
    iterations: usize,
    pg: f64,
}

fn inner_solve<P: Problem>(
    s: &mut Scaled<P>,
    z0: Vec<f64>,
    e0: Evaluation,
    lambda: &[f64],
    rho: f64,
    cfg: &SolverConfig,
    best: &mut Option<Incumbent>,
) -> InnerOutcome {
    let n = z0.len();
    let mut z = z0;
    let mut e = e0;
    let (mut l, mut g) = lagrangian(&e, lambda, rho);
    let mut h = identity(n);
    let mut fresh = true;
    let mut flat = 0;
    let mut iterations = 0;
    let mut pg = projected_gradient_norm(&z, &g, &s.width);
    while iterations < cfg.max_inner_iterations {
        if pg <= cfg.stationarity_tol {
            break;
        }
        iterations += 1;
        let active: Vec<bool> = (0..n).map(|i| s.width[i] == 0.0 || (z[i] <= 0.0 && g[i] > 0.0) || (z[i] >= 1.0 && g[i] < 0.0)).collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| !active[i]) {
            d[i] = -(0..n).filter(|&j| !active[j]).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let slope: f64 = d.iter().zip(&g).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -g[i] };
            }
        }
        if fresh {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > 0.0 {
                let k = (0.1 / dmax).min(1.0);
                d.iter_mut().for_each(|v| *v *= k);
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let zt: Vec<f64> = (0..n).map(|i| (z[i] + t * d[i]).clamp(0.0, 1.0)).collect();
            if zt.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-12) {
                break;
            }
            let et = s.eval(&zt);
            let (lt, gt) = lagrangian(&et, lambda, rho);
            let decrease: f64 = g.iter().zip(zt.iter().zip(&z)).map(|(g, (a, b))| g * (a - b)).sum();
            if lt <= l + 1e-4 * decrease {
                accepted = Some((zt, et, lt, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((zn, en, ln, gn)) = accepted else {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        consider(best, &zn, &en, cfg.constraint_tol);

        let sv: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = sv.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let snorm = sv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ynorm = yv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * snorm * ynorm && sy > 0.0 {
            if fresh {
                // Shanno-Phua scaling of the initial inverse Hessian
                let gamma = sy / (ynorm * ynorm);
                h = identity(n).into_iter().map(|r| r.into_iter().map(|v| v * gamma).collect()).collect();
            }
            bfgs_update(&mut h, &sv, &yv, sy);
            fresh = false;
        }

        if (l - ln).abs() <= 1e-11 * l.abs().max(1.0) {
            flat += 1;
        } else {
            flat = 0;
        }
        z = zn;
        e = en;
        l = ln;
        g = gn;
        pg = projected_gradient_norm(&z, &g, &s.width);
        if flat >= 4 {
            break;
        }
    }
    InnerOutcome { z, eval: e, iterations, pg }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Inverse-Hessian BFGS update H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

/// Minimizes the problem objective over its box subject to `c(x) ≤ 0`.
///
/// Returns the best point found within the constraint tolerance, or the last
/// iterate with status `Infeasible` when none was found.
pub fn minimize_box<P: Problem>(problem: &P, x0: &[f64], cfg: &SolverConfig) -> Result<Minimum, NlpError> {
    minimize_box_warm(problem, x0, None, cfg)
}

/// [`minimize_box`] with initial multiplier estimates (in objective units).
pub fn minimize_box_warm<P: Problem>(
    problem: &P,
    x0: &[f64],
    multipliers: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<Minimum, NlpError> {
    cfg.validate()?;
    let (lo, hi) = (problem.lower(), problem.upper());
    if x0.len() != problem.dim() {
        return Err(NlpError::StartOutsideBox(format!("expected {} values, got {}", problem.dim(), x0.len())));
    }
    if let Some(i) = (0..x0.len()).find(|&i| !(x0[i] >= lo[i] && x0[i] <= hi[i])) {
        return Err(NlpError::StartOutsideBox(format!("component {i} = {} not in [{}, {}]", x0[i], lo[i], hi[i])));
    }
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
    let first = problem.evaluate(x0);
    let fscale = if first.objective != 0.0 { first.objective.abs() } else { 1.0 };
    let mut s = Scaled { problem, lo: lo.to_vec(), width, fscale, evaluations: 1 };
    let mut z = s.to_z(x0);
    let mut e = s.eval(&z);

    let m = problem.num_constraints();
    let mut lambda = match multipliers {
        Some(l) if l.len() == m => l.iter().map(|v| v.max(0.0) / fscale).collect(),
        _ => vec![0.0; m],
    };
    let mut rho = cfg.initial_penalty;
    let mut best = None;
    consider(&mut best, &z, &e, cfg.constraint_tol);
    let mut prev_violation = max_violation(&e.constraints);
    let mut inner_total = 0;
    let mut status = Status::MaxIterations;
    let mut outer = 0;
    let mut stalled = 0;
    while outer < cfg.max_outer_iterations {
        outer += 1;
        let z_before = z.clone();
        let out = inner_solve(&mut s, z, e, &lambda, rho, cfg, &mut best);
        inner_total += out.iterations;
        z = out.z;
        e = out.eval;
        let violation = max_violation(&e.constraints);
        for (l, c) in lambda.iter_mut().zip(&e.constraints) {
            *l = (*l + rho * c).max(0.0);
        }
        let moved = z.iter().zip(&z_before).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if violation <= cfg.constraint_tol {
            let (_, gl) = lagrangian(&e, &lambda, rho);
            let pg = projected_gradient_norm(&z, &gl, &s.width).min(out.pg);
            stalled = if moved <= 1e-12 { stalled + 1 } else { 0 };
            if pg <= cfg.stationarity_tol || stalled >= 2 {
                status = Status::Converged;
                break;
            }
        } else {
            stalled = 0;
            if violation > 0.25 * prev_violation {
                rho *= cfg.penalty_growth;
            }
        }
        prev_violation = violation;
        if rho > 1e14 {
            break;
        }
    }

    let evaluations = s.evaluations;
    let (z, e) = match best {
        Some(b) => (b.z, b.eval),
        None => {
            status = Status::Infeasible;
            (z, e)
        }
    };
    let x = s.to_x(&z);
    Ok(Minimum {
        max_violation: max_violation(&e.constraints),
        objective: e.objective * s.fscale,
        constraints: e.constraints,
        x,
        status,
        outer_iterations: outer,
        inner_iterations: inner_total,
        evaluations,
        multipliers: lambda.iter().map(|l| l * s.fscale).collect(),
    })
}
