//! Sample-average assembly of the expected cost, the smoothed per-feeder
//! chance constraints and the per-sample bound penalty, with exact gradients.
//!
//! For feeder f and scenario n the limit margin is `h = |P_f(n)| - P_max,f`
//! (positive when violated). With Θ ≥ I pointwise:
//!
//! * inner (conservative): `ψ_f(u) = mean_n Θ(τ, h_n) ≤ 1 - α_f`
//! * outer (relaxed):      `φ_f(u) = mean_n Θ(τ, -h_n) ≥ α_f`
//!
//! so ψ-feasibility implies an empirical violation rate of at most 1 - α_f,
//! and an empirical satisfaction rate of at least α_f implies φ-feasibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcflow::{DcModel, Decision, DecisionLayout, FlowError};
use crate::model::Network;
pub use crate::nlp::ValueGrad;
use crate::nlp::{Evaluation, Problem};
use crate::reduce::{det_sum, det_sum_vec};
use crate::scenario::{Scenario, ScenarioError, ScenarioSet};
use crate::smoothing::{indicator, Kernel, SmoothingError, SmoothingParams};

/// Default weight of the per-sample bound penalty, $/h per MW² (and per rad²).
pub const DEFAULT_PENALTY_WEIGHT: f64 = 1e3;

#[derive(Debug, Error)]
pub enum SaaError {
    #[error(transparent)]
    Schema(#[from] ScenarioError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error("feeder index {0} out of range")]
    Feeder(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Inner,
    Outer,
    Deterministic,
}

/// Affine forms of every flow, non-slack angle and the slack power for all
/// scenarios, laid out scenario-major.
#[derive(Debug, Clone)]
pub struct SampleData {
    pub n: usize,
    nf: usize,
    na: usize,
    nw: usize,
    ng: usize,
    flow_const: Vec<f64>,
    angle_const: Vec<f64>,
    slack_const: Vec<f64>,
    wind: Vec<f64>,
    /// Per feeder: shift factors at the wind buses, then at the generator buses.
    flow_coef: Vec<f64>,
    angle_coef: Vec<f64>,
    mean_slack_const: f64,
    mean_wind: Vec<f64>,
}

impl SampleData {
    pub fn new(model: &DcModel, set: &ScenarioSet) -> Result<Self, SaaError> {
        let layout = &model.layout;
        let (nw, ng) = (layout.wind.len(), layout.gens.len());
        let nb = model.bus_ids.len();
        let nf = model.num_feeders();
        let angle_rows: Vec<usize> = (0..nb).filter(|&i| i != model.slack_index()).collect();
        let na = angle_rows.len();
        let dev_cols: Vec<usize> = layout.wind.iter().chain(&layout.gens).map(|b| model.bus_index(*b)).collect();

        let mut flow_coef = Vec::with_capacity(nf * (nw + ng));
        for f in 0..nf {
            flow_coef.extend(dev_cols.iter().map(|&c| model.flow_shift(f, c)));
        }
        let mut angle_coef = Vec::with_capacity(na * (nw + ng));
        for &i in &angle_rows {
            angle_coef.extend(dev_cols.iter().map(|&c| model.angle_shift(i, c)));
        }

        let n = set.count();
        let mut flow_const = vec![0.0; n * nf];
        let mut angle_const = vec![0.0; n * na];
        let mut slack_const = vec![0.0; n];
        let mut wind = vec![0.0; n * nw];
        let mut fixed = vec![0.0; nb];
        for (k, s) in set.scenarios.iter().enumerate() {
            fixed.iter_mut().for_each(|x| *x = 0.0);
            let mut total_load = 0.0;
            for (b, l) in &s.load {
                fixed[model.bus_index(*b)] -= l;
                total_load += l;
            }
            for (w, b) in layout.wind.iter().enumerate() {
                wind[k * nw + w] = *s.wind.get(b).ok_or_else(|| FlowError::MissingValue(format!("wind at bus {b}")))?;
            }
            for f in 0..nf {
                flow_const[k * nf + f] = (0..nb).map(|c| model.flow_shift(f, c) * fixed[c]).sum();
            }
            for (a, &i) in angle_rows.iter().enumerate() {
                angle_const[k * na + a] = (0..nb).map(|c| model.angle_shift(i, c) * fixed[c]).sum();
            }
            slack_const[k] = total_load;
        }
        let inv_n = 1.0 / n as f64;
        let mean_slack_const = det_sum(n, |k| slack_const[k]) * inv_n;
        let mean_wind = (0..nw).map(|w| det_sum(n, |k| wind[k * nw + w]) * inv_n).collect();
        Ok(SampleData { n, nf, na, nw, ng, flow_const, angle_const, slack_const, wind, flow_coef, angle_coef, mean_slack_const, mean_wind })
    }

    pub fn dim(&self) -> usize {
        self.nw + self.ng
    }

    /// Flow on feeder `f` in scenario `k`, and optionally its gradient.
    #[inline]
    pub fn flow(&self, u: &[f64], k: usize, f: usize, grad: Option<&mut [f64]>) -> f64 {
        affine(
            &self.flow_const[k * self.nf + f],
            &self.flow_coef[f * self.dim()..(f + 1) * self.dim()],
            &self.wind[k * self.nw..(k + 1) * self.nw],
            self.nw,
            u,
            grad,
        )
    }

    #[inline]
    pub fn angle(&self, u: &[f64], k: usize, a: usize, grad: Option<&mut [f64]>) -> f64 {
        affine(
            &self.angle_const[k * self.na + a],
            &self.angle_coef[a * self.dim()..(a + 1) * self.dim()],
            &self.wind[k * self.nw..(k + 1) * self.nw],
            self.nw,
            u,
            grad,
        )
    }

    /// P_S(n) = Σ loads - Σ β_w P_w - Σ P_G.
    #[inline]
    pub fn slack(&self, u: &[f64], k: usize, grad: Option<&mut [f64]>) -> f64 {
        let w = &self.wind[k * self.nw..(k + 1) * self.nw];
        let mut v = self.slack_const[k];
        for i in 0..self.nw {
            v -= w[i] * u[i];
        }
        for g in 0..self.ng {
            v -= u[self.nw + g];
        }
        if let Some(gr) = grad {
            for i in 0..self.nw {
                gr[i] = -w[i];
            }
            for g in 0..self.ng {
                gr[self.nw + g] = -1.0;
            }
        }
        v
    }

    /// out += scale · ∂P_f(k)/∂u.
    #[inline]
    pub fn flow_axpy(&self, k: usize, f: usize, scale: f64, out: &mut [f64]) {
        let dim = self.dim();
        axpy(&self.flow_coef[f * dim..(f + 1) * dim], &self.wind[k * self.nw..(k + 1) * self.nw], scale, out);
    }

    /// out += scale · ∂δ_a(k)/∂u.
    #[inline]
    pub fn angle_axpy(&self, k: usize, a: usize, scale: f64, out: &mut [f64]) {
        let dim = self.dim();
        axpy(&self.angle_coef[a * dim..(a + 1) * dim], &self.wind[k * self.nw..(k + 1) * self.nw], scale, out);
    }

    /// out += scale · ∂P_S(k)/∂u.
    #[inline]
    pub fn slack_axpy(&self, k: usize, scale: f64, out: &mut [f64]) {
        let w = &self.wind[k * self.nw..(k + 1) * self.nw];
        for i in 0..self.nw {
            out[i] -= scale * w[i];
        }
        for g in 0..self.ng {
            out[self.nw + g] -= scale;
        }
    }

    pub fn num_feeders(&self) -> usize {
        self.nf
    }

    pub fn num_angles(&self) -> usize {
        self.na
    }

    /// Sample mean of the slack power, with its (constant) gradient.
    pub fn mean_slack(&self, u: &[f64]) -> ValueGrad {
        let mut gradient = vec![-1.0; self.dim()];
        let mut value = self.mean_slack_const;
        for i in 0..self.nw {
            value -= self.mean_wind[i] * u[i];
            gradient[i] = -self.mean_wind[i];
        }
        for g in 0..self.ng {
            value -= u[self.nw + g];
        }
        ValueGrad { value, gradient }
    }
}

#[inline]
fn affine(constant: &f64, coef: &[f64], wind: &[f64], nw: usize, u: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let mut v = *constant;
    for i in 0..nw {
        v += coef[i] * wind[i] * u[i];
    }
    for j in nw..coef.len() {
        v += coef[j] * u[j];
    }
    if let Some(g) = grad {
        for i in 0..nw {
            g[i] = coef[i] * wind[i];
        }
        g[nw..coef.len()].copy_from_slice(&coef[nw..]);
    }
    v
}

#[inline]
fn axpy(coef: &[f64], wind: &[f64], scale: f64, out: &mut [f64]) {
    let nw = wind.len();
    for i in 0..nw {
        out[i] += scale * coef[i] * wind[i];
    }
    for j in nw..coef.len() {
        out[j] += scale * coef[j];
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample bound violation counts of a decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundAudit {
    pub samples: usize,
    pub angle_violations: usize,
    pub slack_violations: usize,
}

/// Network constants needed by the evaluators.
#[derive(Debug, Clone)]
struct Constants {
    gen_prices: Vec<f64>,
    slack_price: f64,
    slack_min: f64,
    slack_max: f64,
    angle_min: f64,
    angle_max: f64,
    p_max: Vec<f64>,
    alpha: Vec<f64>,
    labels: Vec<String>,
}

impl Constants {
    fn new(net: &Network, layout: &DecisionLayout) -> Self {
        Constants {
            gen_prices: layout.gens.iter().map(|b| net.generator(*b).unwrap().price).collect(),
            slack_price: net.slack_source.price,
            slack_min: net.slack_source.p_min,
            slack_max: net.slack_source.p_max,
            angle_min: net.angle_bounds.min,
            angle_max: net.angle_bounds.max,
            p_max: net.feeders.iter().map(|f| f.p_max).collect(),
            alpha: net.feeders.iter().map(|f| f.alpha).collect(),
            labels: net.feeders.iter().map(|f| f.label()).collect(),
        }
    }
}

#[inline]
fn hinge(x: f64, lo: f64, hi: f64) -> f64 {
    if x > hi {
        x - hi
    } else if x < lo {
        x - lo
    } else {
        0.0
    }
}

/// The assembled inner, outer or deterministic problem.
#[derive(Debug, Clone)]
pub struct AssembledProblem {
    pub variant: Variant,
    pub smoothing: SmoothingParams,
    pub penalty_weight: f64,
    pub layout: DecisionLayout,
    pub data: SampleData,
    consts: Constants,
}

impl AssembledProblem {
    pub fn num_feeders(&self) -> usize {
        self.consts.p_max.len()
    }

    pub fn feeder_label(&self, f: usize) -> &str {
        &self.consts.labels[f]
    }

    pub fn alpha(&self, f: usize) -> f64 {
        self.consts.alpha[f]
    }

    /// Overrides the required probability of every feeder.
    pub fn set_alpha(&mut self, alpha: f64) {
        self.consts.alpha.iter_mut().for_each(|a| *a = alpha);
    }

    /// Expected cost Σ Price_G P_G + Price_S · mean_n P_S(n), $/h.
    pub fn cost(&self, u: &[f64]) -> ValueGrad {
        let ms = self.data.mean_slack(u);
        let nw = self.layout.wind.len();
        let mut value = self.consts.slack_price * ms.value;
        let mut gradient: Vec<f64> = ms.gradient.iter().map(|g| self.consts.slack_price * g).collect();
        for (g, price) in self.consts.gen_prices.iter().enumerate() {
            value += price * u[nw + g];
            gradient[nw + g] += price;
        }
        ValueGrad { value, gradient }
    }

    /// Adds sample k's squared-hinge bound violation to acc[0] and its
    /// gradient to acc[1..].
    #[inline]
    fn add_sample_penalty(&self, u: &[f64], k: usize, acc: &mut [f64]) {
        let c = &self.consts;
        for a in 0..self.data.num_angles() {
            let v = hinge(self.data.angle(u, k, a, None), c.angle_min, c.angle_max);
            if v != 0.0 {
                acc[0] += v * v;
                self.data.angle_axpy(k, a, 2.0 * v, &mut acc[1..]);
            }
        }
        let v = hinge(self.data.slack(u, k, None), c.slack_min, c.slack_max);
        if v != 0.0 {
            acc[0] += v * v;
            self.data.slack_axpy(k, 2.0 * v, &mut acc[1..]);
        }
    }

    /// Adds Θ(τ, orient·h) of feeder f in sample k to acc[0] and its gradient
    /// to acc[1..].
    #[inline]
    fn add_sample_smoothed(&self, kernel: &Kernel, u: &[f64], k: usize, f: usize, orient: f64, acc: &mut [f64]) {
        let flow = self.data.flow(u, k, f, None);
        let (th, ds) = kernel.eval(orient * (flow.abs() - self.consts.p_max[f]));
        acc[0] += th;
        let scale = orient * ds * sign(flow);
        if scale != 0.0 {
            self.data.flow_axpy(k, f, scale, &mut acc[1..]);
        }
    }

    /// Σ over samples of squared hinge violations of the angle and slack bounds
    /// (MW² and rad²).
    pub fn bound_penalty(&self, u: &[f64]) -> ValueGrad {
        let dim = self.layout.dim();
        let acc = det_sum_vec(self.data.n, dim + 1, |k, acc| self.add_sample_penalty(u, k, acc));
        ValueGrad { value: acc[0], gradient: acc[1..].to_vec() }
    }

    /// Bound penalty and every feeder's smoothed average in one pass.
    fn fused(&self, u: &[f64], orient: f64) -> (ValueGrad, Vec<ValueGrad>) {
        let dim = self.layout.dim();
        let nf = self.num_feeders();
        let w = dim + 1;
        let kernel = Kernel::new(&self.smoothing);
        let acc = det_sum_vec(self.data.n, w * (nf + 1), |k, acc| {
            self.add_sample_penalty(u, k, &mut acc[..w]);
            for f in 0..nf {
                self.add_sample_smoothed(&kernel, u, k, f, orient, &mut acc[w * (f + 1)..w * (f + 2)]);
            }
        });
        let inv_n = 1.0 / self.data.n as f64;
        let penalty = ValueGrad { value: acc[0], gradient: acc[1..w].to_vec() };
        let smoothed = (0..nf)
            .map(|f| {
                let block = &acc[w * (f + 1)..w * (f + 2)];
                ValueGrad { value: block[0] * inv_n, gradient: block[1..].iter().map(|g| g * inv_n).collect() }
            })
            .collect();
        (penalty, smoothed)
    }

    pub fn audit(&self, u: &[f64]) -> BoundAudit {
        let c = &self.consts;
        let mut audit = BoundAudit { samples: self.data.n, ..Default::default() };
        for k in 0..self.data.n {
            if (0..self.data.num_angles()).any(|a| hinge(self.data.angle(u, k, a, None), c.angle_min, c.angle_max) != 0.0) {
                audit.angle_violations += 1;
            }
            if hinge(self.data.slack(u, k, None), c.slack_min, c.slack_max) != 0.0 {
                audit.slack_violations += 1;
            }
        }
        audit
    }

    /// Margin `|P| - P_max` of feeder `f` in scenario `k`, with gradient.
    pub fn margin(&self, u: &[f64], k: usize, f: usize) -> ValueGrad {
        let mut gradient = vec![0.0; self.layout.dim()];
        let p = self.data.flow(u, k, f, Some(&mut gradient));
        let sg = sign(p);
        gradient.iter_mut().for_each(|g| *g *= sg);
        ValueGrad { value: p.abs() - self.consts.p_max[f], gradient }
    }

    /// ψ_f: sample average of Θ(τ, h_n).
    pub fn psi(&self, u: &[f64], f: usize) -> ValueGrad {
        self.smoothed(u, f, 1.0)
    }

    /// φ_f: sample average of Θ(τ, -h_n).
    pub fn phi(&self, u: &[f64], f: usize) -> ValueGrad {
        self.smoothed(u, f, -1.0)
    }

    fn smoothed(&self, u: &[f64], f: usize, orient: f64) -> ValueGrad {
        let dim = self.layout.dim();
        let kernel = Kernel::new(&self.smoothing);
        let acc = det_sum_vec(self.data.n, dim + 1, |k, acc| self.add_sample_smoothed(&kernel, u, k, f, orient, acc));
        let inv_n = 1.0 / self.data.n as f64;
        ValueGrad { value: acc[0] * inv_n, gradient: acc[1..].iter().map(|g| g * inv_n).collect() }
    }

    /// Empirical violation rate per feeder, mean_n I(h_n).
    pub fn violation_rates(&self, u: &[f64]) -> Vec<f64> {
        self.rates(u, 1.0)
    }

    /// Empirical satisfaction rate per feeder, mean_n I(-h_n).
    pub fn satisfaction_rates(&self, u: &[f64]) -> Vec<f64> {
        self.rates(u, -1.0)
    }

    fn rates(&self, u: &[f64], orient: f64) -> Vec<f64> {
        let nf = self.num_feeders();
        let counts = det_sum_vec(self.data.n, nf, |k, out| {
            for (f, o) in out.iter_mut().enumerate() {
                *o += indicator(orient * (self.data.flow(u, k, f, None).abs() - self.consts.p_max[f]));
            }
        });
        counts.iter().map(|c| c / self.data.n as f64).collect()
    }

    /// Per-feeder constraint values in the solver's `c(u) ≤ 0` form.
    pub fn constraint_values(&self, u: &[f64]) -> Vec<f64> {
        self.evaluate(u).constraints
    }

    /// The smoothed (or hard, for the deterministic variant) per-feeder
    /// quantity reported alongside a solution.
    pub fn feeder_values(&self, u: &[f64]) -> Vec<f64> {
        let nf = self.num_feeders();
        match self.variant {
            Variant::Inner => (0..nf).map(|f| self.psi(u, f).value).collect(),
            Variant::Outer => (0..nf).map(|f| self.phi(u, f).value).collect(),
            Variant::Deterministic => (0..nf).map(|f| self.data.flow(u, 0, f, None).abs() - self.consts.p_max[f]).collect(),
        }
    }

    /// Cost plus weighted mean bound penalty.
    pub fn merit(&self, u: &[f64]) -> ValueGrad {
        self.with_penalty(self.cost(u), self.bound_penalty(u))
    }

    fn with_penalty(&self, c: ValueGrad, p: ValueGrad) -> ValueGrad {
        let w = self.penalty_weight / self.data.n as f64;
        ValueGrad { value: c.value + w * p.value, gradient: c.gradient.iter().zip(&p.gradient).map(|(a, b)| a + w * b).collect() }
    }

    /// Feeders whose flow is zero, or changes sign, within `x ± steps` in
    /// some scenario; their |P| is not differentiable there.
    pub fn kinked_feeders(&self, x: &[f64], steps: &[f64]) -> Vec<usize> {
        let dim = self.layout.dim();
        (0..self.num_feeders())
            .filter(|&f| {
                let mut g = vec![0.0; dim];
                (0..self.data.n).any(|k| {
                    let p = self.data.flow(x, k, f, Some(&mut g));
                    let reach: f64 = g.iter().zip(steps).map(|(a, s)| (a * s).abs()).sum();
                    p.abs() <= reach
                })
            })
            .collect()
    }
}

impl Problem for AssembledProblem {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn lower(&self) -> &[f64] {
        &self.layout.lower
    }

    fn upper(&self) -> &[f64] {
        &self.layout.upper
    }

    fn num_constraints(&self) -> usize {
        match self.variant {
            Variant::Deterministic => 2 * self.num_feeders(),
            _ => self.num_feeders(),
        }
    }

    fn constraint_names(&self) -> Vec<String> {
        let nf = self.num_feeders();
        match self.variant {
            Variant::Inner => (0..nf).map(|f| format!("psi{}", self.consts.labels[f])).collect(),
            Variant::Outer => (0..nf).map(|f| format!("phi{}", self.consts.labels[f])).collect(),
            Variant::Deterministic => (0..nf)
                .flat_map(|f| [format!("flow{}<=pmax", self.consts.labels[f]), format!("flow{}>=-pmax", self.consts.labels[f])])
                .collect(),
        }
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        let nf = self.num_feeders();
        let mut constraints = Vec::with_capacity(self.num_constraints());
        let mut jacobian = Vec::with_capacity(self.num_constraints());
        let penalty = match self.variant {
            Variant::Inner | Variant::Outer => {
                let orient = if self.variant == Variant::Inner { 1.0 } else { -1.0 };
                let (penalty, smoothed) = self.fused(u, orient);
                for (f, v) in smoothed.into_iter().enumerate() {
                    if self.variant == Variant::Inner {
                        constraints.push(v.value - (1.0 - self.consts.alpha[f]));
                        jacobian.push(v.gradient);
                    } else {
                        constraints.push(self.consts.alpha[f] - v.value);
                        jacobian.push(v.gradient.iter().map(|g| -g).collect());
                    }
                }
                penalty
            }
            Variant::Deterministic => {
                for f in 0..nf {
                    let mut g = vec![0.0; self.dim()];
                    let p = self.data.flow(u, 0, f, Some(&mut g));
                    let pm = self.consts.p_max[f];
                    constraints.push(p / pm - 1.0);
                    jacobian.push(g.iter().map(|x| x / pm).collect());
                    constraints.push(-p / pm - 1.0);
                    jacobian.push(g.iter().map(|x| -x / pm).collect());
                }
                self.bound_penalty(u)
            }
        };
        let merit = self.with_penalty(self.cost(u), penalty);
        Evaluation { objective: merit.value, gradient: merit.gradient, constraints, jacobian }
    }

    fn auxiliary_terms(&self, u: &[f64]) -> Vec<(String, ValueGrad)> {
        vec![("cost".to_string(), self.cost(u)), ("bound_penalty".to_string(), self.bound_penalty(u))]
    }

    fn kinked_constraints(&self, x: &[f64], steps: &[f64]) -> Vec<usize> {
        let kinked = self.kinked_feeders(x, steps);
        match self.variant {
            // the deterministic constraints are linear in the signed flow
            Variant::Deterministic => Vec::new(),
            _ => kinked,
        }
    }
}

/// Feasibility restoration: minimizes the mean over samples of
/// Σ_f (max(0, |P_f| - P_max,f + δ) / P_max,f)². Unlike Θ, its gradient does
/// not vanish far inside the violated region.
pub struct Restoration<'a> {
    pub problem: &'a AssembledProblem,
    /// Safety margin δ in MW.
    pub margin: f64,
}

impl Restoration<'_> {
    pub fn value(&self, u: &[f64]) -> ValueGrad {
        let p = self.problem;
        let dim = p.layout.dim();
        let acc = det_sum_vec(p.data.n, dim + 1, |k, acc| {
            for f in 0..p.num_feeders() {
                let flow = p.data.flow(u, k, f, None);
                let pm = p.consts.p_max[f];
                let v = (flow.abs() - pm + self.margin).max(0.0) / pm;
                if v > 0.0 {
                    acc[0] += v * v;
                    p.data.flow_axpy(k, f, 2.0 * v * sign(flow) / pm, &mut acc[1..]);
                }
            }
        });
        let inv_n = 1.0 / p.data.n as f64;
        ValueGrad { value: acc[0] * inv_n, gradient: acc[1..].iter().map(|g| g * inv_n).collect() }
    }
}

impl Problem for Restoration<'_> {
    fn dim(&self) -> usize {
        self.problem.layout.dim()
    }

    fn lower(&self) -> &[f64] {
        &self.problem.layout.lower
    }

    fn upper(&self) -> &[f64] {
        &self.problem.layout.upper
    }

    fn num_constraints(&self) -> usize {
        0
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        let v = self.value(u);
        Evaluation { objective: v.value, gradient: v.gradient, constraints: Vec::new(), jacobian: Vec::new() }
    }
}

/// Builds the inner, outer or deterministic problem. The deterministic variant
/// replaces the scenario set by the single forecast scenario.
pub fn assemble(
    net: &Network,
    set: &ScenarioSet,
    variant: Variant,
    smoothing: SmoothingParams,
    penalty_weight: f64,
) -> Result<AssembledProblem, SaaError> {
    smoothing.validate()?;
    let model = DcModel::new(net)?;
    let data = match variant {
        Variant::Deterministic => SampleData::new(&model, &ScenarioSet::single(Scenario::forecast(net)))?,
        _ => {
            set.check_schema(net)?;
            SampleData::new(&model, set)?
        }
    };
    let consts = Constants::new(net, &model.layout);
    Ok(AssembledProblem { variant, smoothing, penalty_weight, layout: model.layout.clone(), data, consts })
}

fn decision_vec(net: &Network, u: &Decision) -> Result<(DecisionLayout, Vec<f64>), SaaError> {
    let layout = DecisionLayout::new(net);
    let v = layout.to_vec(u)?;
    Ok((layout, v))
}

fn inner_problem(net: &Network, set: &ScenarioSet, p: SmoothingParams) -> Result<AssembledProblem, SaaError> {
    assemble(net, set, Variant::Inner, p, DEFAULT_PENALTY_WEIGHT)
}

/// Sample-average expected operating cost and its gradient.
pub fn objective(net: &Network, u: &Decision, set: &ScenarioSet) -> Result<ValueGrad, SaaError> {
    let (_, v) = decision_vec(net, u)?;
    Ok(inner_problem(net, set, SmoothingParams { tau: 0.5, m1: 1.0, m2: 1.0 })?.cost(&v))
}

/// `|P| - P_max` for one feeder in one scenario.
pub fn feeder_margin(net: &Network, u: &Decision, s: &Scenario, feeder: usize) -> Result<ValueGrad, SaaError> {
    if feeder >= net.feeders.len() {
        return Err(SaaError::Feeder(feeder));
    }
    let (_, v) = decision_vec(net, u)?;
    let model = DcModel::new(net)?;
    let data = SampleData::new(&model, &ScenarioSet::single(s.clone()))?;
    let mut gradient = vec![0.0; v.len()];
    let p = data.flow(&v, 0, feeder, Some(&mut gradient));
    let sg = sign(p);
    gradient.iter_mut().for_each(|g| *g *= sg);
    Ok(ValueGrad { value: p.abs() - net.feeders[feeder].p_max, gradient })
}

pub fn psi_inner(net: &Network, u: &Decision, set: &ScenarioSet, feeder: usize, p: SmoothingParams) -> Result<ValueGrad, SaaError> {
    if feeder >= net.feeders.len() {
        return Err(SaaError::Feeder(feeder));
    }
    let (_, v) = decision_vec(net, u)?;
    Ok(inner_problem(net, set, p)?.psi(&v, feeder))
}

pub fn phi_outer(net: &Network, u: &Decision, set: &ScenarioSet, feeder: usize, p: SmoothingParams) -> Result<ValueGrad, SaaError> {
    if feeder >= net.feeders.len() {
        return Err(SaaError::Feeder(feeder));
    }
    let (_, v) = decision_vec(net, u)?;
    Ok(inner_problem(net, set, p)?.phi(&v, feeder))
}

pub fn bound_penalty(net: &Network, u: &Decision, set: &ScenarioSet) -> Result<ValueGrad, SaaError> {
    let (_, v) = decision_vec(net, u)?;
    Ok(inner_problem(net, set, SmoothingParams { tau: 0.5, m1: 1.0, m2: 1.0 })?.bound_penalty(&v))
}

/// Sample averages of Θ over explicit margins (inner: Θ(h), outer: Θ(-h)).
pub fn smoothed_average(margins: &[f64], p: &SmoothingParams, variant: Variant) -> f64 {
    let orient = if variant == Variant::Outer { -1.0 } else { 1.0 };
    det_sum(margins.len(), |k| crate::smoothing::theta(p, orient * margins[k])) / margins.len() as f64
}
