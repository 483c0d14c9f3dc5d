//! DC power flow and its affine dependence on the decision vector.
//!
//! Nodal balance at bus i: wind + generation + slack - load = Σ_j B(i,j)(δi - δj).
//! The slack angle is fixed to zero and the reduced susceptance matrix is
//! factored once per network.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BusId, Network};
use crate::scenario::Scenario;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("reduced susceptance matrix is singular (feeder graph not connected)")]
    Singular,
    #[error("scenario is missing {0}")]
    MissingValue(String),
    #[error("decision is missing {0}")]
    MissingDecision(String),
}

/// Curtailment factors and conventional generation setpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decision {
    pub beta_w: BTreeMap<BusId, f64>,
    pub p_g: BTreeMap<BusId, f64>,
}

/// Ordering of the flat decision vector: curtailment factors for wind buses
/// (ascending), then generator setpoints (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLayout {
    pub wind: Vec<BusId>,
    pub gens: Vec<BusId>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DecisionLayout {
    pub fn new(net: &Network) -> Self {
        let wind = net.wind_buses();
        let gens = net.generator_buses();
        let mut lower = vec![0.0; wind.len()];
        let mut upper = vec![1.0; wind.len()];
        for g in &gens {
            let gen = net.generator(*g).unwrap();
            lower.push(gen.p_min);
            upper.push(gen.p_max);
        }
        DecisionLayout { wind, gens, lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.wind.len() + self.gens.len()
    }

    pub fn to_vec(&self, u: &Decision) -> Result<Vec<f64>, FlowError> {
        let mut v = Vec::with_capacity(self.dim());
        for b in &self.wind {
            v.push(*u.beta_w.get(b).ok_or_else(|| FlowError::MissingDecision(format!("beta_w for bus {b}")))?);
        }
        for b in &self.gens {
            v.push(*u.p_g.get(b).ok_or_else(|| FlowError::MissingDecision(format!("p_g for bus {b}")))?);
        }
        Ok(v)
    }

    pub fn from_vec(&self, v: &[f64]) -> Decision {
        let nw = self.wind.len();
        Decision {
            beta_w: self.wind.iter().zip(&v[..nw]).map(|(b, x)| (*b, *x)).collect(),
            p_g: self.gens.iter().zip(&v[nw..]).map(|(b, x)| (*b, *x)).collect(),
        }
    }

    /// No curtailment, generators at the midpoints of their ranges.
    pub fn default_start(&self) -> Vec<f64> {
        let nw = self.wind.len();
        (0..self.dim()).map(|k| if k < nw { 1.0 } else { 0.5 * (self.lower[k] + self.upper[k]) }).collect()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim() && v.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    pub fn project(&self, v: &mut [f64]) {
        for (k, x) in v.iter_mut().enumerate() {
            *x = x.clamp(self.lower[k], self.upper[k]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleState {
    /// Voltage angles by bus, radians; the slack bus is 0.
    pub angles: BTreeMap<BusId, f64>,
    /// Signed flow per feeder, MW, in the network's (from, to) orientation.
    pub flows: Vec<f64>,
    pub slack_power: f64,
}

impl SampleState {
    /// Signed flow from `a` to `b`; reversing the orientation flips the sign.
    pub fn flow(&self, net: &Network, a: BusId, b: BusId) -> Option<f64> {
        let k = net.feeder_index(a, b)?;
        let f = &net.feeders[k];
        Some(if f.from_bus == a { self.flows[k] } else { -self.flows[k] })
    }
}

/// `constant + gradient · u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTerm {
    pub constant: f64,
    pub gradient: Vec<f64>,
}

impl AffineTerm {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.constant + self.gradient.iter().zip(u).map(|(g, x)| g * x).sum::<f64>()
    }
}

/// Per-scenario affine forms of every flow, angle and the slack power.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSensitivity {
    pub flows: Vec<AffineTerm>,
    /// Indexed like [`DcModel::bus_ids`].
    pub angles: Vec<AffineTerm>,
    pub slack: AffineTerm,
}

impl AffineSensitivity {
    pub fn evaluate(&self, model: &DcModel, u: &[f64]) -> SampleState {
        SampleState {
            angles: model.bus_ids.iter().zip(&self.angles).map(|(b, t)| (*b, t.eval(u))).collect(),
            flows: self.flows.iter().map(|t| t.eval(u)).collect(),
            slack_power: self.slack.eval(u),
        }
    }
}

/// A network with its reduced susceptance matrix factored.
#[derive(Debug, Clone)]
pub struct DcModel {
    pub bus_ids: Vec<BusId>,
    index: BTreeMap<BusId, usize>,
    slack: usize,
    /// Position of each bus in the reduced system (None for the slack bus).
    reduced: Vec<Option<usize>>,
    chol: Cholesky<f64, Dyn>,
    feeders: Vec<(usize, usize, f64)>,
    pub layout: DecisionLayout,
    /// Angle response to a unit injection: `angle_of[i][j] = ∂δ_i / ∂p_j`.
    angle_of: DMatrix<f64>,
    /// Flow response to a unit injection (injection shift factors).
    flow_of: DMatrix<f64>,
}

impl DcModel {
    pub fn new(net: &Network) -> Result<Self, FlowError> {
        let bus_ids = net.bus_ids();
        let index: BTreeMap<BusId, usize> = bus_ids.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let nb = bus_ids.len();
        let slack = index[&net.slack_bus()];
        let mut reduced = vec![None; nb];
        let mut k = 0;
        for (i, r) in reduced.iter_mut().enumerate() {
            if i != slack {
                *r = Some(k);
                k += 1;
            }
        }
        let feeders: Vec<(usize, usize, f64)> = net.feeders.iter().map(|f| (index[&f.from_bus], index[&f.to_bus], f.susceptance)).collect();

        let mut b_red = DMatrix::<f64>::zeros(nb - 1, nb - 1);
        for &(i, j, b) in &feeders {
            if let Some(ri) = reduced[i] {
                b_red[(ri, ri)] += b;
            }
            if let Some(rj) = reduced[j] {
                b_red[(rj, rj)] += b;
            }
            if let (Some(ri), Some(rj)) = (reduced[i], reduced[j]) {
                b_red[(ri, rj)] -= b;
                b_red[(rj, ri)] -= b;
            }
        }
        let chol = Cholesky::new(b_red).ok_or(FlowError::Singular)?;

        let mut angle_of = DMatrix::<f64>::zeros(nb, nb);
        for j in 0..nb {
            if let Some(rj) = reduced[j] {
                let mut e = DVector::<f64>::zeros(nb - 1);
                e[rj] = 1.0;
                let col = chol.solve(&e);
                for i in 0..nb {
                    if let Some(ri) = reduced[i] {
                        angle_of[(i, j)] = col[ri];
                    }
                }
            }
        }
        let mut flow_of = DMatrix::<f64>::zeros(feeders.len(), nb);
        for (k, &(i, j, b)) in feeders.iter().enumerate() {
            for c in 0..nb {
                flow_of[(k, c)] = b * (angle_of[(i, c)] - angle_of[(j, c)]);
            }
        }
        Ok(DcModel { bus_ids, index, slack, reduced, chol, feeders, layout: DecisionLayout::new(net), angle_of, flow_of })
    }

    pub fn bus_index(&self, b: BusId) -> usize {
        self.index[&b]
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn num_feeders(&self) -> usize {
        self.feeders.len()
    }

    /// ∂flow_k / ∂(injection at bus index `c`).
    pub fn flow_shift(&self, k: usize, c: usize) -> f64 {
        self.flow_of[(k, c)]
    }

    /// ∂δ_i / ∂(injection at bus index `c`).
    pub fn angle_shift(&self, i: usize, c: usize) -> f64 {
        self.angle_of[(i, c)]
    }

    /// Nodal injections from every device except the slack source, by bus index.
    fn injections(&self, u: &[f64], s: &Scenario) -> Result<Vec<f64>, FlowError> {
        let mut p = vec![0.0; self.bus_ids.len()];
        let nw = self.layout.wind.len();
        for (k, b) in self.layout.wind.iter().enumerate() {
            let w = s.wind.get(b).ok_or_else(|| FlowError::MissingValue(format!("wind at bus {b}")))?;
            p[self.index[b]] += u[k] * w;
        }
        for (k, b) in self.layout.gens.iter().enumerate() {
            p[self.index[b]] += u[nw + k];
        }
        for (b, l) in &s.load {
            let i = *self.index.get(b).ok_or_else(|| FlowError::MissingValue(format!("bus {b} in network")))?;
            p[i] -= l;
        }
        Ok(p)
    }

    /// Solves the reduced linear system directly for one scenario.
    pub fn solve(&self, u: &[f64], s: &Scenario) -> Result<SampleState, FlowError> {
        let p = self.injections(u, s)?;
        let nb = self.bus_ids.len();
        let mut rhs = DVector::<f64>::zeros(nb - 1);
        for (r, pi) in self.reduced.iter().zip(&p) {
            if let Some(ri) = r {
                rhs[*ri] = *pi;
            }
        }
        let red = self.chol.solve(&rhs);
        let theta: Vec<f64> = (0..nb).map(|i| self.reduced[i].map_or(0.0, |ri| red[ri])).collect();
        let flows = self.feeders.iter().map(|&(i, j, b)| b * (theta[i] - theta[j])).collect();
        let slack_power = -crate::reduce::pairwise_sum(&p);
        Ok(SampleState { angles: self.bus_ids.iter().zip(&theta).map(|(b, t)| (*b, *t)).collect(), flows, slack_power })
    }

    pub fn sensitivities(&self, s: &Scenario) -> Result<AffineSensitivity, FlowError> {
        let nb = self.bus_ids.len();
        let nw = self.layout.wind.len();
        let dim = self.layout.dim();
        let mut fixed = vec![0.0; nb];
        for (b, l) in &s.load {
            let i = *self.index.get(b).ok_or_else(|| FlowError::MissingValue(format!("bus {b} in network")))?;
            fixed[i] -= l;
        }
        let mut wind = Vec::with_capacity(nw);
        for b in &self.layout.wind {
            wind.push(*s.wind.get(b).ok_or_else(|| FlowError::MissingValue(format!("wind at bus {b}")))?);
        }
        let term = |row: &dyn Fn(usize) -> f64| {
            let constant: f64 = (0..nb).map(|c| row(c) * fixed[c]).sum();
            let mut gradient = vec![0.0; dim];
            for (k, b) in self.layout.wind.iter().enumerate() {
                gradient[k] = row(self.index[b]) * wind[k];
            }
            for (k, b) in self.layout.gens.iter().enumerate() {
                gradient[nw + k] = row(self.index[b]);
            }
            AffineTerm { constant, gradient }
        };
        let flows = (0..self.feeders.len()).map(|k| term(&|c| self.flow_of[(k, c)])).collect();
        let angles = (0..nb).map(|i| term(&|c| self.angle_of[(i, c)])).collect();
        // P_S = Σ loads - Σ β P_w - Σ P_G
        let slack = term(&|_| -1.0);
        Ok(AffineSensitivity { flows, angles, slack })
    }

    /// Largest nodal balance residual (MW) of a solved state, slack included.
    pub fn balance_residual(&self, u: &[f64], s: &Scenario, state: &SampleState) -> Result<f64, FlowError> {
        let mut p = self.injections(u, s)?;
        p[self.slack] += state.slack_power;
        let theta: Vec<f64> = self.bus_ids.iter().map(|b| state.angles[b]).collect();
        let mut lhs = vec![0.0; p.len()];
        for &(i, j, b) in &self.feeders {
            let f = b * (theta[i] - theta[j]);
            lhs[i] += f;
            lhs[j] -= f;
        }
        Ok(lhs.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Solves one scenario's DC flow for decision `u`.
pub fn solve_flow(net: &Network, u: &Decision, s: &Scenario) -> Result<SampleState, FlowError> {
    let model = DcModel::new(net)?;
    let v = model.layout.to_vec(u)?;
    model.solve(&v, s)
}

pub fn sensitivities(net: &Network, s: &Scenario) -> Result<AffineSensitivity, FlowError> {
    DcModel::new(net)?.sensitivities(s)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{parse_network, Bus, Feeder, Generator};

    pub(crate) fn line_net(buses: u32, edges: &[(u32, u32, f64)], loads: &[(u32, f64)]) -> Network {
        let loads_json: Vec<String> = loads
            .iter()
            .map(|(b, m)| {
                format!(
                    r#"{{"bus": {b}, "mean_mw": {m}, "dist": {{"type": "point", "params": {{"value": {m}}}, "support_mw": [{m}, {m}]}}}}"#
                )
            })
            .collect();
        let feeders: Vec<String> = edges
            .iter()
            .map(|(a, b, s)| format!(r#"{{"from": {a}, "to": {b}, "susceptance_mw_per_rad": {s}, "p_max_mw": 500}}"#))
            .collect();
        let bus_json: Vec<String> = (1..=buses).map(|i| format!(r#"{{"id": {i}, "slack": {}}}"#, i == 1)).collect();
        parse_network(&format!(
            r#"{{"buses": [{}], "feeders": [{}], "generators": [],
                "slack_source": {{"bus": 1, "price_per_mwh": 15, "p_min_mw": 0, "p_max_mw": 1000}},
                "wind": [], "loads": [{}]}}"#,
            bus_json.join(","),
            feeders.join(","),
            loads_json.join(",")
        ))
        .unwrap()
    }

    fn empty_decision() -> Decision {
        Decision { beta_w: BTreeMap::new(), p_g: BTreeMap::new() }
    }

    #[test]
    fn two_bus_single_line() {
        let net = line_net(2, &[(1, 2, 1000.0)], &[(2, 100.0)]);
        let s = Scenario::forecast(&net);
        let st = solve_flow(&net, &empty_decision(), &s).unwrap();
        assert!((st.angles[&BusId(2)] + 0.1).abs() < 1e-12);
        assert!((st.flows[0] - 100.0).abs() < 1e-9);
        assert!((st.slack_power - 100.0).abs() < 1e-9);
        assert_eq!(st.angles[&BusId(1)], 0.0);
        let sens = sensitivities(&net, &s).unwrap();
        assert!(sens.flows[0].gradient.is_empty());
        assert!((sens.flows[0].constant - 100.0).abs() < 1e-9);
    }

    #[test]
    fn three_bus_triangle() {
        let net = line_net(3, &[(1, 2, 1000.0), (1, 3, 1000.0), (2, 3, 1000.0)], &[(3, 90.0)]);
        let st = solve_flow(&net, &empty_decision(), &Scenario::forecast(&net)).unwrap();
        assert!((st.angles[&BusId(2)] + 0.03).abs() < 1e-12);
        assert!((st.angles[&BusId(3)] + 0.06).abs() < 1e-12);
        for (k, expect) in [30.0, 60.0, 30.0].iter().enumerate() {
            assert!((st.flows[k] - expect).abs() < 1e-9, "flow {k}: {}", st.flows[k]);
        }
        assert!((st.slack_power - 90.0).abs() < 1e-9);
        assert_eq!(st.flow(&net, BusId(3), BusId(1)), Some(-st.flows[1]));
    }

    #[test]
    fn slack_absorbs_generation() {
        let mut net = line_net(3, &[(1, 2, 1000.0), (1, 3, 1000.0), (2, 3, 1000.0)], &[(3, 90.0)]);
        net.generators.push(Generator { bus: BusId(3), price: 10.0, p_min: 0.0, p_max: 100.0 });
        let sens = sensitivities(&net, &Scenario::forecast(&net)).unwrap();
        assert_eq!(sens.slack.gradient, vec![-1.0]);
    }

    #[test]
    fn zero_injection_gives_zero_state() {
        let net = crate::cases::pjm5();
        let model = DcModel::new(&net).unwrap();
        let mut s = Scenario::forecast(&net);
        s.load.values_mut().for_each(|v| *v = 0.0);
        s.wind.values_mut().for_each(|v| *v = 0.0);
        let st = model.solve(&[0.0, 0.0, 0.0], &s).unwrap();
        assert!(st.angles.values().all(|a| *a == 0.0));
        assert!(st.flows.iter().all(|f| *f == 0.0));
        assert_eq!(st.slack_power, 0.0);
    }

    #[test]
    fn disconnected_graph_is_structural_error() {
        let mut net = line_net(2, &[(1, 2, 1000.0)], &[(2, 10.0)]);
        net.buses.push(Bus { id: BusId(3), is_slack: false });
        assert_eq!(DcModel::new(&net).unwrap_err(), FlowError::Singular);
        net.feeders.push(Feeder { from_bus: BusId(2), to_bus: BusId(3), susceptance: 5.0, p_max: 1.0, alpha: 0.9 });
        assert!(DcModel::new(&net).is_ok());
    }
}
