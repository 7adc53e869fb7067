use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bbm_absorb::config::{self, Command};
use bbm_absorb::runner::{self, CompareTolerances, Manifest, RunError};

/// Absorbed-particle counts of branching Brownian motion with drift.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Seed overriding the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory overriding the configuration's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to BBM_ABSORB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tolerance override, `name=value`; repeatable.
    #[arg(long = "tolerance", global = true, value_name = "NAME=VALUE")]
    tolerances: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the command named in the configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generator coefficients.
    SolveA(Args),
    /// Travelling wave.
    Wave(Args),
    /// Exact law of Z_x.
    Dist(Args),
    /// Monte Carlo ensemble.
    Simulate(Args),
    /// Cross-oracle and identity checks.
    Verify(Args),
    /// Fits, ratio diagnostics and Monte Carlo summary in one JSON.
    Report(Args),
    /// Column-wise deviations between two CSV artifacts.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
}

fn split(cmd: Cmd) -> Result<(Option<Command>, Option<PathBuf>), (PathBuf, PathBuf)> {
    Ok(match cmd {
        Cmd::Run { config } => (None, Some(config)),
        Cmd::SolveA(a) => (Some(Command::SolveA), a.config),
        Cmd::Wave(a) => (Some(Command::Wave), a.config),
        Cmd::Dist(a) => (Some(Command::Dist), a.config),
        Cmd::Simulate(a) => (Some(Command::Simulate), a.config),
        Cmd::Verify(a) => (Some(Command::Verify), a.config),
        Cmd::Report(a) => (Some(Command::Report), a.config),
        Cmd::Compare { a, b } => return Err((a, b)),
    })
}

fn compare(a: PathBuf, b: PathBuf, specs: &[String]) -> Result<bool, RunError> {
    let mut tol = CompareTolerances::default();
    specs.iter().try_for_each(|s| tol.set(s))?;
    let report = runner::compare(&a, &b, tol)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, path) = match split(cli.command) {
        Ok(v) => v,
        Err((a, b)) => {
            return match compare(a, b, &cli.tolerances) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(3),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    let text = match &path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| RunError::Io { path: p.clone(), message: e.to_string() }),
        None => Ok(String::new()),
    };
    let prepared = text.and_then(|text| {
        let mut cfg = config::parse_config(&text, command)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &cli.out {
            cfg.out = out.clone();
        }
        for spec in &cli.tolerances {
            cfg.tolerances.set(spec)?;
        }
        let par = runner::parallelism(cli.threads)?;
        Ok((cfg, par, text))
    });
    let (manifest, dir) = match prepared {
        Ok((cfg, par, text)) => (runner::execute(&cfg, par, Some(text)), cfg.out.clone()),
        Err(e) => (Manifest::failed(&e, None, format!("{:?}", cli.threads)), cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))),
    };
    match manifest.save(&dir) {
        Ok(p) => eprintln!("manifest: {}", p.display()),
        Err(e) => eprintln!("could not write manifest: {e}"),
    }
    if let Some(err) = &manifest.error {
        eprintln!("error ({}): {}", err.kind, err.message);
    }
    ExitCode::from(manifest.exit_code as u8)
}
