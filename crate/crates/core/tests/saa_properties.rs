//! Majorant chain, nesting and gradient properties of the assembled problems.

// feeder indices address several parallel vectors
#![allow(clippy::needless_range_loop)]

use std::sync::OnceLock;

use ccopf::cases;
use ccopf::nlp::{grad_check, Problem};
use ccopf::saa::{assemble, AssembledProblem, Variant, DEFAULT_PENALTY_WEIGHT};
use ccopf::scenario::{generate_scenarios, ScenarioSet, SourceKind};
use ccopf::smoothing::SmoothingParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenarios() -> &'static (ccopf::model::Network, ScenarioSet) {
    static SET: OnceLock<(ccopf::model::Network, ScenarioSet)> = OnceLock::new();
    SET.get_or_init(|| {
        let net = cases::pjm5_case(2);
        let set = generate_scenarios(&net, 2000, 11, SourceKind::MonteCarlo).unwrap();
        (net, set)
    })
}

fn problem(variant: Variant, tau: f64) -> AssembledProblem {
    let (net, set) = scenarios();
    assemble(net, set, variant, SmoothingParams::new(tau, 1.0, 1.0).unwrap(), DEFAULT_PENALTY_WEIGHT).unwrap()
}

fn decision() -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..=1.0, 0.0f64..=400.0, 0.0f64..=500.0).prop_map(|(b, g4, g5)| vec![b, g4, g5])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn smoothed_averages_dominate_empirical_rates(u in decision(), tau in prop::sample::select(vec![0.5, 0.1, 0.01])) {
        let p = problem(Variant::Inner, tau);
        let (viol, sat) = (p.violation_rates(&u), p.satisfaction_rates(&u));
        for f in 0..p.num_feeders() {
            prop_assert!(p.psi(&u, f).value >= viol[f] - 1e-12);
            prop_assert!(p.phi(&u, f).value >= sat[f] - 1e-12);
            // violation and satisfaction partition the samples
            prop_assert!(p.psi(&u, f).value + p.phi(&u, f).value >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn inner_feasible_implies_outer_feasible(u in decision(), tau in prop::sample::select(vec![0.5, 0.1, 0.01])) {
        let p = problem(Variant::Inner, tau);
        let sat = p.satisfaction_rates(&u);
        for f in 0..p.num_feeders() {
            let alpha = p.alpha(f);
            if p.psi(&u, f).value <= 1.0 - alpha {
                prop_assert!(sat[f] >= alpha);
                prop_assert!(p.phi(&u, f).value >= alpha);
            }
        }
    }
}

#[test]
fn psi_approaches_violation_rate_as_tau_shrinks() {
    // margins bounded away from zero so the limit is attained at rate O(τ)
    let margins: Vec<f64> = (0..400).map(|i| if i % 7 == 0 { 0.5 + (i % 5) as f64 } else { -0.5 - (i % 11) as f64 }).collect();
    let rate = margins.iter().filter(|h| **h >= 0.0).count() as f64 / margins.len() as f64;
    for tau in [0.5, 0.25, 0.1, 0.05, 0.01] {
        let p = SmoothingParams::new(tau, 1.0, 1.0).unwrap();
        let psi = ccopf::saa::smoothed_average(&margins, &p, Variant::Inner);
        assert!((psi - rate).abs() <= 10.0 * tau, "tau {tau}: {psi} vs {rate}");
    }
}

#[test]
fn near_unit_alpha_makes_inner_constraint_robust() {
    let (net, set) = scenarios();
    let net = net.clone().with_alpha(1.0 - 1e-12);
    let p = assemble(&net, set, Variant::Inner, SmoothingParams::new(0.01, 1.0, 1.0).unwrap(), DEFAULT_PENALTY_WEIGHT).unwrap();
    // no curtailment at full generation: some sample overloads a feeder
    let u = [1.0, 0.0, 0.0];
    let viol = p.violation_rates(&u);
    let c = p.evaluate(&u).constraints;
    for f in 0..p.num_feeders() {
        if viol[f] > 0.0 {
            assert!(c[f] > 0.0, "feeder {f}");
        }
    }
    assert!(viol.iter().any(|v| *v > 0.0));
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for variant in [Variant::Inner, Variant::Outer] {
        let p = problem(variant, 0.1);
        for _ in 0..25 {
            let (b, g4, g5) = (rng.random_range(0.05..0.95), rng.random_range(20.0..380.0), rng.random_range(20.0..480.0));
            let c = grad_check(&p, &[b, g4, g5], 1e-7);
            skipped += c.skipped.len();
            assert!(c.max_rel_error <= 1e-5, "{variant:?} at {:?}: {c:?}", [b, g4, g5]);
            worst = worst.max(c.max_rel_error);
        }
    }
    assert!(started.elapsed().as_secs_f64() < 30.0);
    eprintln!("worst relative gradient error {worst:e}, {skipped} kinked constraints skipped");
}

#[test]
fn zero_flow_feeders_are_skipped_by_the_gradient_check() {
    // a single forecast scenario with the (1,5) flow driven to zero
    let net = cases::pjm5_case(1);
    let set = ScenarioSet::single(ccopf::scenario::Scenario::forecast(&net));
    let p = assemble(&net, &set, Variant::Inner, SmoothingParams::new(0.1, 1.0, 1.0).unwrap(), DEFAULT_PENALTY_WEIGHT).unwrap();
    let f15 = net.feeder_index(ccopf::model::BusId(1), ccopf::model::BusId(5)).unwrap();
    // flow is affine in P_G(5): solve for its root
    let flow = |g5: f64| p.data.flow(&[1.0, 200.0, g5], 0, f15, None);
    let (a, b) = (flow(0.0), flow(500.0));
    let g5 = -a * 500.0 / (b - a);
    assert!((0.0..=500.0).contains(&g5));
    let c = grad_check(&p, &[1.0, 200.0, g5], 1e-7);
    assert!(c.skipped.contains(&p.constraint_names()[f15]), "{c:?}");
}
