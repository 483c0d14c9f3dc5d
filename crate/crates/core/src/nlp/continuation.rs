use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{max_violation, minimize_box, minimize_box_warm, Minimum, NlpError, Problem, SolveReport, SolverConfig, Status};
use crate::model::Network;
use crate::saa::{assemble, AssembledProblem, Restoration, Variant};
use crate::scenario::ScenarioSet;
use crate::smoothing::SmoothingParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub obj_oa: f64,
    pub obj_ia: f64,
    /// (obj_IA - obj_OA) / |obj_IA|.
    pub gap: f64,
}

impl Bracket {
    fn new(obj_oa: f64, obj_ia: f64) -> Self {
        Bracket { obj_oa, obj_ia, gap: (obj_ia - obj_oa) / obj_ia.abs().max(f64::MIN_POSITIVE) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketEntry {
    pub tau: f64,
    #[serde(flatten)]
    pub bracket: Bracket,
    pub oa_status: Status,
    pub ia_status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    /// Last inner solution: the certified decision.
    pub inner: SolveReport,
    /// Last outer solution: its objective is the lower bound.
    pub outer: SolveReport,
    pub bracket: Bracket,
    pub trace: Vec<BracketEntry>,
    pub warnings: Vec<String>,
}

fn feasible(m: &Minimum) -> bool {
    m.status != Status::Infeasible
}

/// Keeps the feasible result with the lower objective.
fn better(a: Minimum, b: Minimum) -> Minimum {
    match (feasible(&a), feasible(&b)) {
        (true, false) => a,
        (false, true) => b,
        (false, false) => {
            if b.max_violation < a.max_violation {
                b
            } else {
                a
            }
        }
        (true, true) => {
            if b.objective < a.objective {
                b
            } else {
                a
            }
        }
    }
}

/// Solves the outer/inner pair along the τ schedule, warm-starting each solve
/// from the previous one, and returns the last inner solution with the
/// objective bracket.
pub fn continuation_solve(
    net: &Network,
    set: &ScenarioSet,
    p0: SmoothingParams,
    cfg: &SolverConfig,
    penalty_weight: f64,
) -> Result<ContinuationResult, NlpError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut inner = assemble(net, set, Variant::Inner, p0.with_tau(cfg.tau0), penalty_weight)?;
    let mut outer = inner.clone();
    outer.variant = Variant::Outer;

    // Θ saturates far inside the violated region, so an infeasible start is
    // first pulled back with a non-saturating margin penalty.
    let mut start = inner.layout.default_start();
    if max_violation(&inner.evaluate(&start).constraints) > cfg.constraint_tol {
        let r = Restoration { problem: &inner, margin: 10.0 * cfg.tau0 };
        start = minimize_box(&r, &start, cfg)?.x;
    }

    let mut x_oa = start.clone();
    let mut last_ia: Option<Minimum> = None;
    let mut last_oa: Option<Minimum> = None;
    let mut trace: Vec<BracketEntry> = Vec::new();
    let mut warnings = Vec::new();
    let mut taus = Vec::new();
    let mut total_iterations = 0;

    for tau in cfg.tau_schedule() {
        inner.smoothing = p0.with_tau(tau);
        outer.smoothing = p0.with_tau(tau);
        taus.push(tau);

        let lam_oa = last_oa.as_ref().map(|m| m.multipliers.as_slice());
        let lam_ia = last_ia.as_ref().map(|m| m.multipliers.clone());
        let mut oa = minimize_box_warm(&outer, &x_oa, lam_oa, cfg)?;
        total_iterations += oa.inner_iterations;
        if !feasible(&oa) {
            if let Some(prev) = &last_ia {
                // an inner-feasible point is outer-feasible
                let alt = minimize_box(&outer, &prev.x, cfg)?;
                total_iterations += alt.inner_iterations;
                oa = better(oa, alt);
            }
        }

        let mut ia = minimize_box_warm(&inner, &oa.x, lam_ia.as_deref(), cfg)?;
        total_iterations += ia.inner_iterations;
        if let Some(prev) = &last_ia {
            if !feasible(&ia) || ia.objective > prev.objective {
                let alt = minimize_box_warm(&inner, &prev.x, lam_ia.as_deref(), cfg)?;
                total_iterations += alt.inner_iterations;
                ia = better(ia, alt);
            }
        } else if !feasible(&ia) && start != oa.x {
            let alt = minimize_box(&inner, &start, cfg)?;
            total_iterations += alt.inner_iterations;
            ia = better(ia, alt);
        }
        if !feasible(&ia) {
            let best_alpha = if last_ia.is_none() { feasible_alpha(&inner, &start, cfg)? } else { None };
            return Err(NlpError::Infeasible { tau, best_alpha });
        }

        if oa.objective > ia.objective {
            let alt = minimize_box(&outer, &ia.x, cfg)?;
            total_iterations += alt.inner_iterations;
            oa = better(oa, alt);
        }

        let bracket = Bracket::new(oa.objective, ia.objective);
        if bracket.obj_oa > bracket.obj_ia + 10.0 * cfg.stationarity_tol * bracket.obj_ia.abs() {
            warnings.push(format!("tau = {tau}: outer objective {} exceeds inner objective {}", bracket.obj_oa, bracket.obj_ia));
        }
        if let Some(prev) = trace.last() {
            if bracket.gap > prev.bracket.gap + 1e-6 {
                warnings.push(format!("tau = {tau}: bracket gap grew from {} to {}", prev.bracket.gap, bracket.gap));
            }
        }
        trace.push(BracketEntry { tau, bracket, oa_status: oa.status, ia_status: ia.status });
        x_oa = oa.x.clone();
        last_oa = Some(oa);
        last_ia = Some(ia);
        if bracket.gap <= cfg.gap_tol {
            break;
        }
    }

    let (ia, oa) = (last_ia.unwrap(), last_oa.unwrap());
    let bracket = trace.last().unwrap().bracket;
    let mut inner_report = SolveReport::from_minimum(&inner, &ia, started);
    let mut outer_report = SolveReport::from_minimum(&outer, &oa, started);
    for r in [&mut inner_report, &mut outer_report] {
        r.tau_trace = taus.clone();
        r.bracket = Some(bracket);
        r.bracket_trace = trace.clone();
        r.warnings = warnings.clone();
        r.iterations = total_iterations;
        r.network_digest = Some(net.digest());
        r.training = Some(set.provenance());
    }
    inner_report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(ContinuationResult { inner: inner_report, outer: outer_report, bracket, trace, warnings })
}

/// Largest common α (by bisection) for which the inner problem at the current
/// τ has a feasible point reachable from `start`.
fn feasible_alpha(problem: &AssembledProblem, start: &[f64], cfg: &SolverConfig) -> Result<Option<f64>, NlpError> {
    let target = (0..problem.num_feeders()).map(|f| problem.alpha(f)).fold(0.5, f64::max);
    let mut p = problem.clone();
    let mut solves = |alpha: f64| -> Result<bool, NlpError> {
        p.set_alpha(alpha);
        Ok(feasible(&minimize_box(&p, start, cfg)?))
    };
    let (mut lo, mut hi) = (0.5, target);
    if !solves(lo)? {
        return Ok(None);
    }
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        if solves(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}
