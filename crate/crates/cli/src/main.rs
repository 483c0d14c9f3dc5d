//! `ccopf`: scenario generation, chance-constrained and deterministic solves,
//! verification and comparison reports.

mod commands;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{CompareArgs, GenArgs, Run, SolveArgs, VerifyArgs};
use error::Failure;
use manifest::{digests, file_digest, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "ccopf", version, about = "Chance-constrained DC optimal power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a scenario set for a network.
    Gen(GenArgs),
    /// Solve the chance-constrained or deterministic OPF.
    Solve(SolveArgs),
    /// Estimate per-feeder satisfaction probabilities of a solution.
    Verify(VerifyArgs),
    /// Compare a stochastic and a deterministic solution sample by sample.
    Compare(CompareArgs),
    /// Re-run a command from its manifest and check the outputs are unchanged.
    Replay { manifest: PathBuf },
}

fn config_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("CCOPF_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::input(format!("CCOPF_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::input(format!("cannot configure worker pool: {e}")))
}

fn execute<A: Serialize>(name: &str, args: &A, run: impl FnOnce(&A) -> Result<Run, Failure>) -> Result<(), Failure> {
    let started = Instant::now();
    let r = run(args)?;
    let inputs: Vec<&Path> = r.inputs.iter().map(PathBuf::as_path).collect();
    let outputs: Vec<&Path> = r.outputs.iter().map(PathBuf::as_path).collect();
    let m = RunManifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        argv: std::env::args().collect(),
        config: serde_json::to_value(args).expect("arguments serialize"),
        inputs: digests(&inputs)?,
        outputs: digests(&outputs)?,
        threads: rayon::current_num_threads(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    m.write(&r.manifest)?;
    r.failure.map_or(Ok(()), Err)
}

fn config<T: serde::de::DeserializeOwned>(m: &RunManifest) -> Result<T, Failure> {
    serde_json::from_value(m.config.clone()).map_err(|e| Failure::input(format!("manifest configuration for `{}`: {e}", m.command)))
}

/// Re-runs without touching the manifest, then compares output digests.
fn replay(path: &Path) -> Result<(), Failure> {
    let m = RunManifest::load(path)?;
    for (input, digest) in &m.inputs {
        if file_digest(Path::new(input))? != *digest {
            return Err(Failure::input(format!("input {input} changed since the manifest was written")));
        }
    }
    let run = match m.command.as_str() {
        "gen" => commands::gen(&config(&m)?),
        "solve" => commands::solve(&config(&m)?),
        "verify" => commands::verify(&config(&m)?),
        "compare" => commands::compare_cmd(&config(&m)?),
        other => return Err(Failure::input(format!("unknown command `{other}` in manifest"))),
    }?;
    let mut differing = Vec::new();
    for (output, digest) in &m.outputs {
        let same = file_digest(Path::new(output))? == *digest;
        println!("{output}: {}", if same { "identical" } else { "differs" });
        if !same {
            differing.push(output.clone());
        }
    }
    if !differing.is_empty() {
        return Err(Failure::input(format!("replay did not reproduce {}", differing.join(", "))));
    }
    run.failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = config_threads().and_then(|()| match &cli.command {
        Command::Gen(a) => execute("gen", a, commands::gen),
        Command::Solve(a) => execute("solve", a, commands::solve),
        Command::Verify(a) => execute("verify", a, commands::verify),
        Command::Compare(a) => execute("compare", a, commands::compare_cmd),
        Command::Replay { manifest } => replay(manifest),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
