//! Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Criteria 5-9 drive the `ccopf` binary end to end.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use ccopf::cases;
use ccopf::nlp::{grad_check, SolverConfig};
use ccopf::saa::{assemble, Variant, DEFAULT_PENALTY_WEIGHT};
use ccopf::scenario::{generate_scenarios, SourceKind};
use ccopf::smoothing::{check_majorant, standard_grid, theta, SmoothingParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const ALPHA: f64 = 0.98;
const TRAINING_SAMPLES: &str = "20000";
const MIN_PROBABILITY: f64 = 0.975;
const CASE_BUDGET_S: f64 = 60.0;
const FINAL_GAP: f64 = 0.02;
const STOCHASTIC_RATE: f64 = 0.02 + 0.003;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn network(case: usize) -> PathBuf {
    let file = match case {
        1 => "pjm5.json",
        2 => "pjm5_case2.json",
        _ => "pjm5_case3.json",
    };
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

fn ccopf(args: &[&str], threads: Option<&str>) -> (i32, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ccopf"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("CCOPF_THREADS", n),
        None => cmd.env_remove("CCOPF_THREADS"),
    };
    let out = cmd.output().expect("ccopf runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("output exists")).expect("output is JSON")
}

fn majorant() -> Outcome {
    let started = Instant::now();
    let mut worst = f64::INFINITY;
    let mut exact_at_zero = true;
    for tau in [0.5, 0.1, 0.01] {
        let p = SmoothingParams::new(tau, 1.0, 1.0).unwrap();
        let c = check_majorant(&p, &standard_grid(&p, 10_000));
        worst = worst.min(c.worst_margin);
        exact_at_zero &= theta(&p, 0.0) == 1.0;
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(worst >= 0.0 && exact_at_zero && secs < 1.0, format!("min Θ-I {worst:.3e}, Θ(τ,0)=1 exact: {exact_at_zero}, {secs:.3} s"))
}

fn inequality_chain() -> Outcome {
    let net = cases::pjm5_case(2);
    let set = generate_scenarios(&net, 20000, 1, SourceKind::MonteCarlo).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<[f64; 3]> =
        (0..100).map(|_| [rng.random_range(0.0..=1.0), rng.random_range(0.0..=400.0), rng.random_range(0.0..=500.0)]).collect();
    let mut worst = f64::INFINITY;
    for tau in [0.1, 0.01] {
        let p = assemble(&net, &set, Variant::Inner, SmoothingParams::new(tau, 1.0, 1.0).unwrap(), DEFAULT_PENALTY_WEIGHT).unwrap();
        for u in &points {
            let (viol, sat) = (p.violation_rates(u), p.satisfaction_rates(u));
            for f in 0..p.num_feeders() {
                worst = worst.min(p.psi(u, f).value - viol[f]).min(p.phi(u, f).value - sat[f]);
            }
        }
    }
    outcome(worst >= -1e-12, format!("min smoothed average minus empirical rate {worst:.3e}"))
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let net = cases::pjm5_case(2);
    let set = generate_scenarios(&net, 2000, 1, SourceKind::MonteCarlo).unwrap();
    let params = SmoothingParams::new(0.1, 1.0, 1.0).unwrap();
    let problems: Vec<_> =
        [Variant::Inner, Variant::Outer].map(|v| assemble(&net, &set, v, params, DEFAULT_PENALTY_WEIGHT).unwrap()).into();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut skipped) = (0.0f64, Vec::new());
    for _ in 0..50 {
        let u = [rng.random_range(0.05..0.95), rng.random_range(20.0..380.0), rng.random_range(20.0..480.0)];
        for p in &problems {
            let c = grad_check(p, &u, 1e-7);
            worst = worst.max(c.max_rel_error);
            skipped.extend(c.skipped);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(worst <= 1e-5 && secs < 30.0, format!("max relative error {worst:.2e}, kinked skipped {skipped:?}, {secs:.1} s"))
}

fn flow_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let two = oracle::small_net(2, &[(1, 2, 1000.0)], &[(2, 100.0)]);
    let three = oracle::small_net(3, &[(1, 2, 1000.0), (1, 3, 1000.0), (2, 3, 1000.0)], &[(3, 90.0)]);
    for net in [&two, &three] {
        worst = worst.max(oracle::oracle_error(net, &oracle::no_decision(), &ccopf::scenario::Scenario::forecast(net)));
    }
    let hand = |net: &ccopf::model::Network| {
        ccopf::dcflow::solve_flow(net, &oracle::no_decision(), &ccopf::scenario::Scenario::forecast(net)).unwrap().flows
    };
    let hand_ok = (hand(&two)[0] - 100.0).abs() <= 1e-9 && hand(&three).iter().zip([30.0, 60.0, 30.0]).all(|(a, b)| (a - b).abs() <= 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(200.0..20000.0)).collect();
        let loads: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..600.0)).collect();
        let (net, u, s) = oracle::five_bus_instance(
            &b,
            &loads,
            rng.random_range(0.0..600.0),
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=400.0),
            rng.random_range(0.0..=500.0),
        );
        worst = worst.max(oracle::oracle_error(&net, &u, &s));
    }
    outcome(worst <= 1e-9 && hand_ok, format!("max deviation {worst:.2e} MW over 2 hand cases and 100 random instances"))
}

struct CaseRun {
    dir: PathBuf,
    report: Value,
    min_probability: f64,
    seconds: f64,
    ok: bool,
}

fn run_case(root: &Path, case: usize) -> CaseRun {
    let dir = root.join(format!("case{case}"));
    std::fs::create_dir_all(&dir).unwrap();
    let net = network(case);
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let net_s = net.to_string_lossy().into_owned();
    let started = Instant::now();
    let steps: [Vec<String>; 3] = [
        ["gen", "--network", &net_s, "--count", TRAINING_SAMPLES, "--seed", "1", "--out", &p("train.csv")].map(String::from).into(),
        ["solve", "--network", &net_s, "--scenarios", &p("train.csv"), "--out", &p("cc.json")].map(String::from).into(),
        ["verify", "--network", &net_s, "--solution", &p("cc.json"), "--points", "65536", "--method", "qmc", "--out", &p("probs.csv")]
            .map(String::from)
            .into(),
    ];
    let mut ok = true;
    for args in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, err) = ccopf(&args, None);
        if code != 0 {
            eprintln!("case {case}: `{}` exited {code}: {err}", args[0]);
            ok = false;
            break;
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    if !ok {
        return CaseRun { dir, report: Value::Null, min_probability: 0.0, seconds, ok };
    }
    let probs = json(&dir.join("probs.json"));
    let min_probability = probs["feeders"].as_array().unwrap().iter().map(|f| f["probability"].as_f64().unwrap()).fold(1.0, f64::min);
    CaseRun { report: json(&dir.join("cc.json")), dir, min_probability, seconds, ok }
}

fn certification(runs: &[CaseRun]) -> Outcome {
    let pass = runs.iter().all(|r| r.ok && r.min_probability >= MIN_PROBABILITY && r.seconds <= CASE_BUDGET_S);
    let detail: Vec<String> =
        runs.iter().enumerate().map(|(i, r)| format!("case {}: min p {:.5}, {:.1} s", i + 1, r.min_probability, r.seconds)).collect();
    outcome(pass, detail.join("; "))
}

fn trends(runs: &[CaseRun]) -> Outcome {
    if runs.iter().any(|r| !r.ok) {
        return outcome(false, "a case did not solve");
    }
    let betas: Vec<f64> = runs.iter().map(|r| r.report["u_star"]["beta_w"]["3"].as_f64().unwrap()).collect();
    let objs: Vec<f64> = runs.iter().map(|r| r.report["objective"].as_f64().unwrap()).collect();
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let pass = non_increasing(&betas) && non_increasing(&objs) && (betas[0] - 1.0).abs() <= 1e-2;
    outcome(pass, format!("beta_w(3) {betas:.4?}, objective {objs:.2?}"))
}

fn bracketing(runs: &[CaseRun]) -> Outcome {
    if runs.iter().any(|r| !r.ok) {
        return outcome(false, "a case did not solve");
    }
    let tol = SolverConfig::default().stationarity_tol;
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let trace = r.report["bracket_trace"].as_array().unwrap();
        let gap = |e: &Value| e["gap"].as_f64().unwrap();
        let ordered = trace.iter().all(|e| {
            let (oa, ia) = (e["obj_oa"].as_f64().unwrap(), e["obj_ia"].as_f64().unwrap());
            oa <= ia + 10.0 * tol * ia.abs()
        });
        let (first, last) = (gap(&trace[0]), gap(trace.last().unwrap()));
        pass &= ordered && last <= first && last <= FINAL_GAP;
        detail.push(format!("case {}: {} steps, gap {first:.2e} -> {last:.2e}", i + 1, trace.len()));
    }
    outcome(pass, detail.join("; "))
}

fn baseline_contrast(case3: &CaseRun) -> Outcome {
    if !case3.ok {
        return outcome(false, "case 3 did not solve");
    }
    let net = network(3).to_string_lossy().into_owned();
    let p = |name: &str| case3.dir.join(name).to_string_lossy().into_owned();
    let (c1, e1) = ccopf(&["solve", "--network", &net, "--variant", "det", "--out", &p("det.json")], None);
    let (c2, e2) = ccopf(
        &[
            "compare",
            "--network",
            &net,
            "--scenarios",
            &p("train.csv"),
            "--stoch",
            &p("cc.json"),
            "--det",
            &p("det.json"),
            "--out",
            &p("cmp"),
        ],
        None,
    );
    if c1 != 0 || c2 != 0 {
        return outcome(false, format!("det solve exited {c1}, compare exited {c2}: {e1}{e2}"));
    }
    let summary = json(&case3.dir.join("cmp/summary.json"));
    let feeders = summary["feeders"].as_array().unwrap();
    let rate = |key: &str| feeders.iter().map(|f| f[key].as_f64().unwrap()).fold(0.0, f64::max);
    let (det, stoch) = (rate("deterministic_rate"), rate("stochastic_rate"));
    outcome(det > 1.0 - ALPHA && stoch <= STOCHASTIC_RATE, format!("worst violation rate: deterministic {det:.4}, stochastic {stoch:.4}"))
}

fn reproducibility(root: &Path) -> Outcome {
    let dir = root.join("replay");
    std::fs::create_dir_all(&dir).unwrap();
    let net = network(2).to_string_lossy().into_owned();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let runs: [Vec<String>; 5] = [
        ["gen", "--network", &net, "--count", "2000", "--seed", "7", "--out", &p("s.csv")].map(String::from).into(),
        ["solve", "--network", &net, "--scenarios", &p("s.csv"), "--out", &p("cc.json")].map(String::from).into(),
        ["solve", "--network", &net, "--variant", "det", "--out", &p("det.json")].map(String::from).into(),
        ["verify", "--network", &net, "--solution", &p("cc.json"), "--out", &p("probs.csv")].map(String::from).into(),
        ["compare", "--network", &net, "--scenarios", &p("s.csv"), "--stoch", &p("cc.json"), "--det", &p("det.json"), "--out", &p("cmp")]
            .map(String::from)
            .into(),
    ];
    let manifests = [
        p("s.csv.manifest.json"),
        p("cc.json.manifest.json"),
        p("det.json.manifest.json"),
        p("probs.csv.manifest.json"),
        p("cmp/manifest.json"),
    ];
    for args in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, err) = ccopf(&args, None);
        if code != 0 {
            return outcome(false, format!("`{}` exited {code}: {err}", args[0]));
        }
    }
    let mut replays = 0;
    for threads in [Some("1"), Some("4"), None] {
        for m in &manifests {
            let (code, err) = ccopf(&["replay", m], threads);
            if code != 0 {
                return outcome(false, format!("replay of {m} with CCOPF_THREADS={threads:?} exited {code}: {err}"));
            }
            replays += 1;
        }
    }
    outcome(true, format!("{replays} replays byte-identical (5 commands x threads 1, 4, default)"))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(usize, Outcome)> = vec![(1, majorant()), (2, inequality_chain()), (3, gradients()), (4, flow_oracle())];
    let runs: Vec<CaseRun> = (1..=3).map(|c| run_case(root.path(), c)).collect();
    results.push((5, certification(&runs)));
    results.push((6, trends(&runs)));
    results.push((7, bracketing(&runs)));
    results.push((8, baseline_contrast(&runs[2])));
    results.push((9, reproducibility(root.path())));

    let mut failed = 0;
    for (n, o) in &results {
        println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
