//! Certification of a decision on fresh samples: per-feeder satisfaction
//! probabilities, per-sample trajectories and stochastic/deterministic
//! comparisons.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcflow::{DcModel, Decision, FlowError};
use crate::model::{BusId, Network};
use crate::nlp::SolveReport;
use crate::reduce::pairwise_sum;
use crate::scenario::{generate_scenarios, Provenance, SampleSource, Scenario, ScenarioError, ScenarioSet, SourceKind};

/// Smallest accepted verification sample count.
pub const MIN_POINTS: usize = 1 << 10;

/// Default verification sample count.
pub const DEFAULT_POINTS: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("verification needs at least {MIN_POINTS} points, got {0}")]
    Points(usize),
    #[error("decision outside its bounds: {0}")]
    OutOfBounds(String),
    #[error("verification samples {verification:?} overlap the training samples {training:?}")]
    Overlap { verification: SampleSource, training: SampleSource },
    #[error("report `{which}` was solved on network {found}, expected {expected}")]
    NetworkMismatch { which: String, found: String, expected: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qmc,
    Mc,
}

impl Method {
    fn kind(self) -> SourceKind {
        match self {
            Method::Qmc => SourceKind::QuasiMonteCarlo,
            Method::Mc => SourceKind::MonteCarlo,
        }
    }
}

/// Picks a verification source disjoint from the training samples: for QMC the
/// Halton points right after the training range, for MC the stream seeded with
/// the training seed plus one. An explicit `seed` (MC seed or QMC skip) wins.
pub fn verification_source(
    method: Method,
    points: usize,
    training: Option<&Provenance>,
    seed: Option<u64>,
) -> Result<SampleSource, VerifyError> {
    let source = match (method, seed) {
        (Method::Mc, Some(s)) => SampleSource::MonteCarlo { seed: s },
        (Method::Qmc, Some(s)) => SampleSource::QuasiMonteCarlo { skip: s },
        (Method::Mc, None) => match training.map(|t| t.source) {
            Some(SampleSource::MonteCarlo { seed }) => SampleSource::MonteCarlo { seed: seed.wrapping_add(1) },
            _ => SampleSource::MonteCarlo { seed: 1 },
        },
        (Method::Qmc, None) => match training {
            Some(Provenance { source: SampleSource::QuasiMonteCarlo { skip }, count }) => {
                SampleSource::QuasiMonteCarlo { skip: skip + *count as u64 }
            }
            _ => SampleSource::QuasiMonteCarlo { skip: 0 },
        },
    };
    check_disjoint(&source, points, training)?;
    Ok(source)
}

fn check_disjoint(source: &SampleSource, points: usize, training: Option<&Provenance>) -> Result<(), VerifyError> {
    if let Some(t) = training {
        if source.overlaps(points, &t.source, t.count) {
            return Err(VerifyError::Overlap { verification: *source, training: t.source });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederProbability {
    pub from: BusId,
    pub to: BusId,
    pub alpha: f64,
    /// Samples with |P| ≤ P_max.
    pub satisfied: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    pub method: Method,
    pub points: usize,
    pub source: SampleSource,
    pub training: Option<Provenance>,
    pub buses: Vec<BusId>,
    /// In network feeder order.
    pub feeders: Vec<FeederProbability>,
}

impl ProbabilityTable {
    pub fn min_probability(&self) -> f64 {
        self.feeders.iter().map(|f| f.probability).fold(1.0, f64::min)
    }

    /// Probability of the feeder joining `a` and `b`, in either orientation.
    pub fn get(&self, a: BusId, b: BusId) -> Option<f64> {
        self.feeders.iter().find(|f| (f.from == a && f.to == b) || (f.from == b && f.to == a)).map(|f| f.probability)
    }

    /// Symmetric bus-by-bus matrix; `N/A` where no feeder joins the pair.
    pub fn write_matrix_csv<W: Write>(&self, mut out: W) -> Result<(), VerifyError> {
        let mut buf = String::from("bus");
        for b in &self.buses {
            buf.push_str(&format!(",{b}"));
        }
        buf.push('\n');
        for a in &self.buses {
            buf.push_str(&a.to_string());
            for b in &self.buses {
                buf.push(',');
                match self.get(*a, *b) {
                    Some(p) => buf.push_str(&p.to_string()),
                    None => buf.push_str("N/A"),
                }
            }
            buf.push('\n');
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

fn check_bounds(model: &DcModel, v: &[f64]) -> Result<(), VerifyError> {
    let l = &model.layout;
    for (k, x) in v.iter().enumerate() {
        if !(l.lower[k] <= *x && *x <= l.upper[k]) {
            return Err(VerifyError::OutOfBounds(format!("component {k} = {x} not in [{}, {}]", l.lower[k], l.upper[k])));
        }
    }
    Ok(())
}

/// Per-feeder count of samples whose flow magnitude stays within the limit.
fn satisfied_counts(net: &Network, model: &DcModel, v: &[f64], scenarios: &[Scenario]) -> Result<Vec<usize>, VerifyError> {
    let nf = net.feeders.len();
    let flags: Vec<Vec<bool>> = scenarios
        .par_iter()
        .map(|s| {
            let st = model.solve(v, s)?;
            Ok(st.flows.iter().zip(&net.feeders).map(|(p, f)| p.abs() <= f.p_max).collect())
        })
        .collect::<Result<_, FlowError>>()?;
    let mut counts = vec![0; nf];
    for row in &flags {
        for (c, ok) in counts.iter_mut().zip(row) {
            *c += usize::from(*ok);
        }
    }
    Ok(counts)
}

/// Estimates Pr{|P(i,j)| ≤ P_max(i,j)} per feeder for decision `u` from
/// `points` fresh samples drawn from `source`.
pub fn true_probability(
    net: &Network,
    u: &Decision,
    points: usize,
    source: SampleSource,
    training: Option<Provenance>,
) -> Result<ProbabilityTable, VerifyError> {
    if points < MIN_POINTS {
        return Err(VerifyError::Points(points));
    }
    check_disjoint(&source, points, training.as_ref())?;
    let model = DcModel::new(net)?;
    let v = model.layout.to_vec(u)?;
    check_bounds(&model, &v)?;
    let (method, seed) = match source {
        SampleSource::MonteCarlo { seed } => (Method::Mc, seed),
        SampleSource::QuasiMonteCarlo { skip } => (Method::Qmc, skip),
        SampleSource::External => (Method::Mc, 1),
    };
    let set = generate_scenarios(net, points, seed, method.kind())?;
    let counts = satisfied_counts(net, &model, &v, &set.scenarios)?;
    let feeders = net
        .feeders
        .iter()
        .zip(counts)
        .map(|(f, satisfied)| FeederProbability {
            from: f.from_bus,
            to: f.to_bus,
            alpha: f.alpha,
            satisfied,
            probability: satisfied as f64 / points as f64,
        })
        .collect();
    Ok(ProbabilityTable { method, points, source: set.source, training, buses: net.bus_ids(), feeders })
}

/// Per-sample flows, slack power and cost of a fixed decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub decision: Decision,
    /// `(from, to)` of each flow column.
    pub feeders: Vec<(BusId, BusId)>,
    pub flows: Vec<Vec<f64>>,
    pub slack_mw: Vec<f64>,
    pub cost_per_h: Vec<f64>,
}

impl TrajectoryBundle {
    pub fn len(&self) -> usize {
        self.cost_per_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cost_per_h.is_empty()
    }

    pub fn mean_cost(&self) -> f64 {
        pairwise_sum(&self.cost_per_h) / self.len() as f64
    }

    /// CSV `sample,flow_<i>_<j>...,slack_mw,cost_per_h`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), VerifyError> {
        let mut buf = String::from("sample");
        for (a, b) in &self.feeders {
            buf.push_str(&format!(",flow_{a}_{b}"));
        }
        buf.push_str(",slack_mw,cost_per_h\n");
        for n in 0..self.len() {
            buf.push_str(&n.to_string());
            for p in &self.flows[n] {
                buf.push(',');
                buf.push_str(&p.to_string());
            }
            buf.push_str(&format!(",{},{}\n", self.slack_mw[n], self.cost_per_h[n]));
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }
}

pub fn trajectories(net: &Network, u: &Decision, set: &ScenarioSet) -> Result<TrajectoryBundle, VerifyError> {
    let model = DcModel::new(net)?;
    let v = model.layout.to_vec(u)?;
    let nw = model.layout.wind.len();
    let gen_cost: f64 = model.layout.gens.iter().enumerate().map(|(k, b)| net.generator(*b).unwrap().price * v[nw + k]).sum();
    let states = set.scenarios.par_iter().map(|s| model.solve(&v, s)).collect::<Result<Vec<_>, FlowError>>()?;
    let slack_price = net.slack_source.price;
    Ok(TrajectoryBundle {
        decision: u.clone(),
        feeders: net.feeders.iter().map(|f| (f.from_bus, f.to_bus)).collect(),
        cost_per_h: states.iter().map(|s| gen_cost + slack_price * s.slack_power).collect(),
        slack_mw: states.iter().map(|s| s.slack_power).collect(),
        flows: states.into_iter().map(|s| s.flows).collect(),
    })
}

/// Empirical violation counts of one decision over a sample set.
fn violation_counts(net: &Network, b: &TrajectoryBundle) -> Vec<usize> {
    (0..net.feeders.len()).map(|f| b.flows.iter().filter(|row| row[f].abs() > net.feeders[f].p_max).count()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederComparison {
    pub from: BusId,
    pub to: BusId,
    pub alpha: f64,
    pub stochastic_violations: usize,
    pub stochastic_rate: f64,
    pub deterministic_violations: usize,
    pub deterministic_rate: f64,
    /// The deterministic decision exceeds 1 - α while the stochastic one does not.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub decision: Decision,
    /// Reported optimization objective.
    pub report_objective: f64,
    /// Mean cost over the comparison samples, $/h.
    pub expected_cost: f64,
    /// Cost at forecast wind and mean loads, $/h.
    pub forecast_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub samples: usize,
    pub network_digest: String,
    pub stochastic: DecisionSummary,
    pub deterministic: DecisionSummary,
    pub feeders: Vec<FeederComparison>,
    /// Labels `(i,j)` of flagged feeders.
    pub flagged: Vec<String>,
}

/// The comparison and the two trajectory bundles it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutput {
    pub summary: Comparison,
    pub stochastic: TrajectoryBundle,
    pub deterministic: TrajectoryBundle,
}

fn check_digest(which: &str, report: &SolveReport, expected: &str) -> Result<(), VerifyError> {
    match &report.network_digest {
        Some(d) if d != expected => Err(VerifyError::NetworkMismatch { which: which.into(), found: d.clone(), expected: expected.into() }),
        _ => Ok(()),
    }
}

pub fn compare(
    net: &Network,
    set: &ScenarioSet,
    stochastic: &SolveReport,
    deterministic: &SolveReport,
) -> Result<ComparisonOutput, VerifyError> {
    let digest = net.digest();
    check_digest("stochastic", stochastic, &digest)?;
    check_digest("deterministic", deterministic, &digest)?;
    let forecast = ScenarioSet::single(Scenario::forecast(net));
    let summarize = |r: &SolveReport| -> Result<(DecisionSummary, TrajectoryBundle), VerifyError> {
        let bundle = trajectories(net, &r.u_star, set)?;
        let at_forecast = trajectories(net, &r.u_star, &forecast)?;
        let summary = DecisionSummary {
            decision: r.u_star.clone(),
            report_objective: r.objective,
            expected_cost: bundle.mean_cost(),
            forecast_cost: at_forecast.cost_per_h[0],
        };
        Ok((summary, bundle))
    };
    let (s_sum, s_bundle) = summarize(stochastic)?;
    let (d_sum, d_bundle) = summarize(deterministic)?;
    let (sv, dv) = (violation_counts(net, &s_bundle), violation_counts(net, &d_bundle));
    let n = set.count() as f64;
    let feeders: Vec<FeederComparison> = net
        .feeders
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let (sr, dr) = (sv[k] as f64 / n, dv[k] as f64 / n);
            let limit = 1.0 - f.alpha;
            FeederComparison {
                from: f.from_bus,
                to: f.to_bus,
                alpha: f.alpha,
                stochastic_violations: sv[k],
                stochastic_rate: sr,
                deterministic_violations: dv[k],
                deterministic_rate: dr,
                flagged: dr > limit && sr <= limit,
            }
        })
        .collect();
    let flagged = net.feeders.iter().zip(&feeders).filter(|(_, c)| c.flagged).map(|(f, _)| f.label()).collect();
    Ok(ComparisonOutput {
        summary: Comparison { samples: set.count(), network_digest: digest, stochastic: s_sum, deterministic: d_sum, feeders, flagged },
        stochastic: s_bundle,
        deterministic: d_bundle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::model::DistributionSpec;

    fn case1_decision(net: &Network) -> Decision {
        let l = DcModel::new(net).unwrap().layout;
        l.from_vec(&l.default_start())
    }

    #[test]
    fn matrix_csv_is_symmetric_with_na_for_absent_feeders() {
        let net = cases::pjm5_case(1);
        let t = true_probability(&net, &case1_decision(&net), MIN_POINTS, SampleSource::QuasiMonteCarlo { skip: 0 }, None).unwrap();
        let mut buf = Vec::new();
        t.write_matrix_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        assert_eq!(rows[0], ["bus", "1", "2", "3", "4", "5"]);
        #[allow(clippy::needless_range_loop)]
        for i in 1..=5 {
            assert_eq!(rows[i][i], "N/A");
            for j in 1..=5 {
                assert_eq!(rows[i][j], rows[j][i]);
            }
        }
        assert_eq!(rows[1][3], "N/A");
        assert_ne!(rows[1][2], "N/A");
        assert_eq!(text.matches("N/A").count(), 25 - 12);
    }

    #[test]
    fn point_mass_trajectories_repeat_one_row() {
        let mut net = cases::pjm5_case(2);
        for w in &mut net.wind_farms {
            w.distribution = DistributionSpec::point(w.forecast);
        }
        for l in &mut net.loads {
            l.distribution = DistributionSpec::point(l.mean);
        }
        let set = generate_scenarios(&net, 3, 9, SourceKind::MonteCarlo).unwrap();
        let b = trajectories(&net, &case1_decision(&net), &set).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.flows.windows(2).all(|w| w[0] == w[1]));
        assert!(b.cost_per_h.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn overlapping_verification_samples_are_rejected() {
        let net = cases::pjm5_case(1);
        let training = Provenance { source: SampleSource::MonteCarlo { seed: 4 }, count: 100 };
        let err = true_probability(&net, &case1_decision(&net), MIN_POINTS, SampleSource::MonteCarlo { seed: 4 }, Some(training));
        assert!(matches!(err, Err(VerifyError::Overlap { .. })));

        let training = Provenance { source: SampleSource::QuasiMonteCarlo { skip: 0 }, count: 100 };
        let s = verification_source(Method::Qmc, MIN_POINTS, Some(&training), None).unwrap();
        assert_eq!(s, SampleSource::QuasiMonteCarlo { skip: 100 });
        assert!(verification_source(Method::Qmc, MIN_POINTS, Some(&training), Some(50)).is_err());
        let s =
            verification_source(Method::Mc, MIN_POINTS, Some(&Provenance { source: SampleSource::MonteCarlo { seed: 4 }, count: 9 }), None)
                .unwrap();
        assert_eq!(s, SampleSource::MonteCarlo { seed: 5 });
    }

    #[test]
    fn too_few_points_or_out_of_box_decisions_are_rejected() {
        let net = cases::pjm5_case(1);
        let u = case1_decision(&net);
        assert!(matches!(true_probability(&net, &u, 100, SampleSource::MonteCarlo { seed: 1 }, None), Err(VerifyError::Points(100))));
        let mut bad = u.clone();
        bad.beta_w.values_mut().for_each(|b| *b = 1.5);
        assert!(matches!(
            true_probability(&net, &bad, MIN_POINTS, SampleSource::MonteCarlo { seed: 1 }, None),
            Err(VerifyError::OutOfBounds(_))
        ));
    }
}
