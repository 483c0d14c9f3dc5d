//! Dense Gaussian-elimination reference for the DC flow, shared by test targets.

// each test target uses a different subset; the elimination reads best indexed
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use ccopf::cases;
use ccopf::dcflow::{sensitivities, solve_flow, DcModel, Decision};
use ccopf::model::{BusId, Network};
use ccopf::scenario::Scenario;

/// Angles (slack = 0) by solving the reduced system with partial pivoting.
pub fn oracle_angles(net: &Network, u: &Decision, s: &Scenario) -> BTreeMap<BusId, f64> {
    let ids = net.bus_ids();
    let slack = net.slack_bus();
    let red: Vec<BusId> = ids.iter().copied().filter(|b| *b != slack).collect();
    let pos = |b: BusId| red.iter().position(|x| *x == b);
    let n = red.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for f in &net.feeders {
        let (i, j) = (pos(f.from_bus), pos(f.to_bus));
        if let Some(i) = i {
            a[i][i] += f.susceptance;
        }
        if let Some(j) = j {
            a[j][j] += f.susceptance;
        }
        if let (Some(i), Some(j)) = (i, j) {
            a[i][j] -= f.susceptance;
            a[j][i] -= f.susceptance;
        }
    }
    for (k, b) in red.iter().enumerate() {
        let mut p = 0.0;
        if let Some(w) = s.wind.get(b) {
            p += u.beta_w[b] * w;
        }
        if let Some(g) = u.p_g.get(b) {
            p += g;
        }
        if let Some(l) = s.load.get(b) {
            p -= l;
        }
        a[k][n] = p;
    }
    for c in 0..n {
        let piv = (c..n).max_by(|x, y| a[*x][c].abs().total_cmp(&a[*y][c].abs())).unwrap();
        a.swap(c, piv);
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            for k in c..=n {
                a[r][k] -= m * a[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (a[r][n] - tail) / a[r][r];
    }
    let mut out: BTreeMap<BusId, f64> = red.into_iter().zip(x).collect();
    out.insert(slack, 0.0);
    out
}

pub fn oracle_flows(net: &Network, angles: &BTreeMap<BusId, f64>) -> Vec<f64> {
    net.feeders.iter().map(|f| f.susceptance * (angles[&f.from_bus] - angles[&f.to_bus])).collect()
}

pub fn oracle_slack(u: &Decision, s: &Scenario) -> f64 {
    let wind: f64 = s.wind.iter().map(|(b, w)| u.beta_w[b] * w).sum();
    let load: f64 = s.load.values().sum();
    let gen: f64 = u.p_g.values().sum();
    load - wind - gen
}

/// Largest deviation (MW) of `solve_flow` and the affine sensitivities from the oracle.
pub fn oracle_error(net: &Network, u: &Decision, s: &Scenario) -> f64 {
    let st = solve_flow(net, u, s).unwrap();
    let flows = oracle_flows(net, &oracle_angles(net, u, s));
    let mut worst = (st.slack_power - oracle_slack(u, s)).abs();
    for (a, b) in st.flows.iter().zip(&flows) {
        worst = worst.max((a - b).abs());
    }
    let model = DcModel::new(net).unwrap();
    let v = model.layout.to_vec(u).unwrap();
    let sens = sensitivities(net, s).unwrap();
    for (term, b) in sens.flows.iter().zip(&flows) {
        worst = worst.max((term.eval(&v) - b).abs());
    }
    worst.max((sens.slack.eval(&v) - st.slack_power).abs())
}

/// The bundled topology with the given line data, loads, wind and decision.
pub fn five_bus_instance(susceptance: &[f64], loads: &[f64], wind: f64, beta: f64, g4: f64, g5: f64) -> (Network, Decision, Scenario) {
    let mut net = cases::pjm5();
    for (f, b) in net.feeders.iter_mut().zip(susceptance) {
        f.susceptance = *b;
    }
    let mut s = Scenario::forecast(&net);
    for (v, l) in s.load.values_mut().zip(loads) {
        *v = *l;
    }
    s.wind.insert(BusId(3), wind);
    let u = Decision { beta_w: [(BusId(3), beta)].into(), p_g: [(BusId(4), g4), (BusId(5), g5)].into() };
    (net, u, s)
}

pub fn no_decision() -> Decision {
    Decision { beta_w: BTreeMap::new(), p_g: BTreeMap::new() }
}

pub fn small_net(buses: u32, edges: &[(u32, u32, f64)], load: &[(u32, f64)]) -> Network {
    let bus_json: Vec<String> = (1..=buses).map(|i| format!(r#"{{"id": {i}, "slack": {}}}"#, i == 1)).collect();
    let feeders: Vec<String> =
        edges.iter().map(|(a, b, s)| format!(r#"{{"from": {a}, "to": {b}, "susceptance_mw_per_rad": {s}, "p_max_mw": 500}}"#)).collect();
    let loads: Vec<String> = load
        .iter()
        .map(|(b, m)| {
            format!(r#"{{"bus": {b}, "mean_mw": {m}, "dist": {{"type": "point", "params": {{"value": {m}}}, "support_mw": [{m}, {m}]}}}}"#)
        })
        .collect();
    ccopf::model::parse_network(&format!(
        r#"{{"buses": [{}], "feeders": [{}], "generators": [],
            "slack_source": {{"bus": 1, "price_per_mwh": 15, "p_min_mw": 0, "p_max_mw": 1000}},
            "wind": [], "loads": [{}]}}"#,
        bus_json.join(","),
        feeders.join(","),
        loads.join(",")
    ))
    .unwrap()
}
