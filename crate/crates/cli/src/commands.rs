use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use ccopf::dcflow::DcModel;
use ccopf::model::{load_network, validate_network, Network};
use ccopf::nlp::{continuation_solve, minimize, SolveReport, SolverConfig, Status};
use ccopf::saa::{assemble, Variant};
use ccopf::scenario::{generate_scenarios, load_scenarios, write_scenarios, Provenance, SampleSource, Scenario, ScenarioSet, SourceKind};
use ccopf::smoothing::SmoothingParams;
use ccopf::verify::{compare, true_probability, verification_source, Method};

use crate::error::Failure;
use crate::manifest::{file_digest, sidecar, write_file, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Mc,
    Qmc,
}

impl From<Source> for SourceKind {
    fn from(s: Source) -> Self {
        match s {
            Source::Mc => SourceKind::MonteCarlo,
            Source::Qmc => SourceKind::QuasiMonteCarlo,
        }
    }
}

impl From<Source> for Method {
    fn from(s: Source) -> Self {
        match s {
            Source::Mc => Method::Mc,
            Source::Qmc => Method::Qmc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveVariant {
    /// Chance-constrained: inner/outer continuation.
    Cc,
    /// Deterministic OPF at the forecasts.
    Det,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.5..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha must lie in [0.5, 1], got {a}"))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Number of scenarios.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    /// Generator seed (MC) or number of skipped Halton points (QMC).
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Source::Mc)]
    pub source: Source,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Scenario CSV (required for the cc variant).
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Overrides every feeder's probability level.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub tau0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau_decay: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub m1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub m2: f64,
    #[arg(long, value_enum, default_value_t = SolveVariant::Cc)]
    pub variant: SolveVariant,
    /// Weight of the angle/slack bound penalty, $/h per MW² (or rad²).
    #[arg(long, default_value_t = ccopf::saa::DEFAULT_PENALTY_WEIGHT)]
    pub penalty_weight: f64,
    #[arg(long, default_value_t = SolverConfig::default().gap_tol)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().constraint_tol)]
    pub constraint_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().stationarity_tol)]
    pub stationarity_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().initial_penalty)]
    pub initial_penalty: f64,
    #[arg(long, default_value_t = SolverConfig::default().penalty_growth)]
    pub penalty_growth: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_outer_iterations)]
    pub max_outer: usize,
    #[arg(long, default_value_t = SolverConfig::default().max_inner_iterations)]
    pub max_inner: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl SolveArgs {
    fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_outer_iterations: self.max_outer,
            max_inner_iterations: self.max_inner,
            constraint_tol: self.constraint_tol,
            stationarity_tol: self.stationarity_tol,
            initial_penalty: self.initial_penalty,
            penalty_growth: self.penalty_growth,
            tau0: self.tau0,
            decay: self.tau_decay,
            tau_min: self.tau_min,
            gap_tol: self.gap_tol,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Must match the value the solution was computed with.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    /// Solve report JSON.
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = ccopf::verify::DEFAULT_POINTS)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = Source::Qmc)]
    pub method: Source,
    /// MC seed or Halton skip; by default chosen disjoint from the training samples.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Matrix CSV; the flat JSON records go next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Must match the value the reports were computed with.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Chance-constrained solve report.
    #[arg(long)]
    pub stoch: PathBuf,
    /// Deterministic solve report.
    #[arg(long)]
    pub det: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// What a command read and wrote, for its manifest.
pub struct Run {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    /// Set when outputs were written but the solve did not converge.
    pub failure: Option<Failure>,
}

fn network(path: &Path, alpha: Option<f64>) -> Result<Network, Failure> {
    let net = load_network(path)?;
    match alpha {
        None => Ok(net),
        Some(a) => {
            let net = net.with_alpha(a);
            let v = validate_network(&net);
            if v.is_empty() {
                Ok(net)
            } else {
                Err(Failure::input(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))
            }
        }
    }
}

fn load_report(path: &Path) -> Result<SolveReport, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("malformed solution file {}: {e}", path.display())))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn gen(a: &GenArgs) -> Result<Run, Failure> {
    let net = network(&a.network, None)?;
    let set = generate_scenarios(&net, a.count as usize, a.seed, a.source.into())?;
    let mut buf = Vec::new();
    write_scenarios(&set, &mut buf)?;
    write_file(&a.out, &buf)?;
    Ok(Run { inputs: vec![a.network.clone()], outputs: vec![a.out.clone()], manifest: sidecar(&a.out), failure: None })
}

/// Recovers the provenance of a scenario file from the manifest `gen` wrote
/// next to it, provided the file is unchanged since.
fn scenario_provenance(path: &Path, count: usize) -> Option<Provenance> {
    let m = RunManifest::load(&sidecar(path)).ok()?;
    if m.command != "gen" || m.outputs.get(&path.display().to_string())? != &file_digest(path).ok()? {
        return None;
    }
    let g: GenArgs = serde_json::from_value(m.config).ok()?;
    let source = match g.source {
        Source::Mc => SampleSource::MonteCarlo { seed: g.seed },
        Source::Qmc => SampleSource::QuasiMonteCarlo { skip: g.seed },
    };
    Some(Provenance { source, count })
}

pub fn solve(a: &SolveArgs) -> Result<Run, Failure> {
    let net = network(&a.network, a.alpha)?;
    let cfg = a.solver_config();
    cfg.validate()?;
    let p0 = SmoothingParams::new(a.tau0, a.m1, a.m2).map_err(|e| Failure::input(e.to_string()))?;
    let mut inputs = vec![a.network.clone()];
    let report = match a.variant {
        SolveVariant::Cc => {
            let path = a.scenarios.as_ref().ok_or_else(|| Failure::input("--scenarios is required for the cc variant"))?;
            inputs.push(path.clone());
            let mut set = load_scenarios(path, &net)?;
            if let Some(p) = scenario_provenance(path, set.count()) {
                set.source = p.source;
            }
            continuation_solve(&net, &set, p0, &cfg, a.penalty_weight)?.inner
        }
        SolveVariant::Det => {
            let set = ScenarioSet::single(Scenario::forecast(&net));
            let problem = assemble(&net, &set, Variant::Deterministic, p0, a.penalty_weight)?;
            let layout = DcModel::new(&net).map_err(|e| Failure::input(e.to_string()))?.layout;
            let mut r = minimize(&problem, &layout.from_vec(&layout.default_start()), &cfg)?;
            r.network_digest = Some(net.digest());
            r.training = Some(set.provenance());
            r
        }
    };
    write_file(&a.out, &json_bytes(&report))?;
    let failure = match report.status {
        Status::Converged => None,
        Status::MaxIterations => {
            Some(Failure::NonConvergence(format!("solver stopped at its iteration limit; report written to {}", a.out.display())))
        }
        Status::Infeasible => Some(Failure::Infeasible(format!("no feasible point found; report written to {}", a.out.display()))),
    };
    Ok(Run { inputs, outputs: vec![a.out.clone()], manifest: sidecar(&a.out), failure })
}

pub fn verify(a: &VerifyArgs) -> Result<Run, Failure> {
    let net = network(&a.network, a.alpha)?;
    let report = load_report(&a.solution)?;
    let digest = net.digest();
    if let Some(d) = &report.network_digest {
        if *d != digest {
            return Err(Failure::input(format!("solution was computed on network {d}, but {} has digest {digest}", a.network.display())));
        }
    }
    let source = verification_source(a.method.into(), a.points, report.training.as_ref(), a.seed)?;
    let table = true_probability(&net, &report.u_star, a.points, source, report.training)?;
    let mut csv = Vec::new();
    table.write_matrix_csv(&mut csv)?;
    write_file(&a.out, &csv)?;
    let json_path = a.out.with_extension("json");
    write_file(&json_path, &json_bytes(&table))?;
    Ok(Run {
        inputs: vec![a.network.clone(), a.solution.clone()],
        outputs: vec![a.out.clone(), json_path],
        manifest: sidecar(&a.out),
        failure: None,
    })
}

pub fn compare_cmd(a: &CompareArgs) -> Result<Run, Failure> {
    let net = network(&a.network, a.alpha)?;
    let set = load_scenarios(&a.scenarios, &net)?;
    let (stoch, det) = (load_report(&a.stoch)?, load_report(&a.det)?);
    let out = compare(&net, &set, &stoch, &det)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::input(format!("cannot create {}: {e}", a.out.display())))?;
    let paths = [a.out.join("stochastic_trajectories.csv"), a.out.join("deterministic_trajectories.csv"), a.out.join("summary.json")];
    let mut buf = Vec::new();
    out.stochastic.write_csv(&mut buf)?;
    write_file(&paths[0], &buf)?;
    buf.clear();
    out.deterministic.write_csv(&mut buf)?;
    write_file(&paths[1], &buf)?;
    write_file(&paths[2], &json_bytes(&out.summary))?;
    Ok(Run {
        inputs: vec![a.network.clone(), a.scenarios.clone(), a.stoch.clone(), a.det.clone()],
        outputs: paths.to_vec(),
        manifest: a.out.join("manifest.json"),
        failure: None,
    })
}
