use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{minimize_box, Bracket, BracketEntry, Minimum, NlpError, Problem, SolverConfig, Status};
use crate::dcflow::Decision;
use crate::saa::{AssembledProblem, BoundAudit, Variant};
use crate::scenario::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValue {
    pub name: String,
    /// In `c ≤ 0` form.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub variant: Variant,
    pub u_star: Decision,
    /// Expected cost plus the weighted bound penalty, $/h; the minimized quantity.
    pub objective: f64,
    /// Price_G·P_G + Price_S·mean P_S, $/h.
    pub expected_cost: f64,
    /// Mean squared-hinge bound violation per sample.
    pub bound_penalty: f64,
    pub tau: Option<f64>,
    pub constraints: Vec<ConstraintValue>,
    /// ψ_f (inner), φ_f (outer) or the hard margin |P| - P_max in MW
    /// (deterministic), in network feeder order.
    pub feeder_values: Vec<f64>,
    /// Empirical violation rate per feeder on the solve's sample set.
    pub violation_rates: Vec<f64>,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub evaluations: usize,
    pub tau_trace: Vec<f64>,
    pub bracket: Option<Bracket>,
    pub bracket_trace: Vec<BracketEntry>,
    pub status: Status,
    pub audit: BoundAudit,
    pub samples: usize,
    pub warnings: Vec<String>,
    pub network_digest: Option<String>,
    /// Scenario set the decision was trained on.
    #[serde(default)]
    pub training: Option<Provenance>,
    /// Wall time is kept out of the serialized report so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl SolveReport {
    pub(crate) fn from_minimum(problem: &AssembledProblem, m: &Minimum, started: Instant) -> SolveReport {
        let names = problem.constraint_names();
        let cost = problem.cost(&m.x).value;
        let penalty = problem.bound_penalty(&m.x).value / problem.data.n as f64;
        SolveReport {
            variant: problem.variant,
            u_star: problem.layout.from_vec(&m.x),
            objective: m.objective,
            expected_cost: cost,
            bound_penalty: penalty,
            tau: (problem.variant != Variant::Deterministic).then_some(problem.smoothing.tau),
            constraints: names.into_iter().zip(&m.constraints).map(|(name, v)| ConstraintValue { name, value: *v }).collect(),
            feeder_values: problem.feeder_values(&m.x),
            violation_rates: problem.violation_rates(&m.x),
            iterations: m.inner_iterations,
            outer_iterations: m.outer_iterations,
            evaluations: m.evaluations,
            tau_trace: Vec::new(),
            bracket: None,
            bracket_trace: Vec::new(),
            status: m.status,
            audit: problem.audit(&m.x),
            samples: problem.data.n,
            warnings: Vec::new(),
            network_digest: None,
            training: None,
            wall_time_s: started.elapsed().as_secs_f64(),
        }
    }

    pub fn max_violation(&self) -> f64 {
        self.constraints.iter().fold(0.0, |m, c| m.max(c.value))
    }
}

/// Solves one assembled problem from `u0`.
pub fn minimize(problem: &AssembledProblem, u0: &Decision, cfg: &SolverConfig) -> Result<SolveReport, NlpError> {
    let started = Instant::now();
    let x0 = problem.layout.to_vec(u0)?;
    let m = minimize_box(problem, &x0, cfg)?;
    Ok(SolveReport::from_minimum(problem, &m, started))
}
