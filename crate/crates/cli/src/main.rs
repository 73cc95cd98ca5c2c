//! `bwflow` command-line front end.

mod commands;
mod ingest;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::commands::{CliError, Command, Outcome};
use crate::manifest::{default_manifest_path, hash_all, versions, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "bwflow",
    version,
    about = "Statistics for flows of covariance matrices in the Bures-Wasserstein geometry"
)]
struct Cli {
    /// Cap on worker threads for parallel sections [default: all cores]
    #[arg(long, global = true, env = "BWFLOW_THREADS")]
    threads: Option<usize>,
    /// Where to write the run manifest [default: next to the primary output]
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let start = Instant::now();
    match cli.command.run() {
        Ok(outcome) => finish(&cli, outcome, start.elapsed().as_secs_f64()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn finish(cli: &Cli, outcome: Outcome, wall: f64) -> ExitCode {
    let code = if outcome.converged { 0 } else { 3 };
    for note in &outcome.notes {
        eprintln!("note: {note}");
    }
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config: outcome.config,
        seed: outcome.seed,
        versions: versions(),
        inputs: hash_all(&outcome.inputs),
        outputs: hash_all(&outcome.outputs),
        wall_time_seconds: wall,
        exit_code: code,
        notes: outcome.notes,
    };
    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&outcome.primary));
    let written = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| e.to_string())
        .and_then(|bytes| std::fs::write(&path, bytes).map_err(|e| e.to_string()));
    if let Err(e) = written {
        eprintln!("error: cannot write manifest {}: {e}", path.display());
        return ExitCode::from(2);
    }
    if code == 3 {
        eprintln!("error: iteration did not converge; outputs and traces were written");
    }
    ExitCode::from(code as u8)
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Bw(e) if e.is_non_convergence() => 3,
            _ => 2,
        }
    }
}
