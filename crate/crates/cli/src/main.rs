//! Command-line front end. Exit codes: 0 when every check passed, 1 when a
//! verification check failed, 2 for configuration or internal errors, 3 when
//! the fixed-point solver did not converge.

mod commands;
mod config;
mod manifest;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{RunContext, Verdict};
use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    NonConvergence(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Internal(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::NonConvergence(msg) => write!(f, "non-convergence: {msg}"),
            CliError::Internal(msg) => write!(f, "internal: {msg}"),
        }
    }
}

impl From<qvelab::Error> for CliError {
    fn from(e: qvelab::Error) -> Self {
        match &e {
            qvelab::Error::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            qvelab::Error::Invalid(_)
            | qvelab::Error::Domain(_)
            | qvelab::Error::Dimension { .. }
            | qvelab::Error::Resolution(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "qvelab", version, about = "Vector Dyson equation toolkit: solve, scan, verify")]
struct Cli {
    /// Experiment configuration (TOML, schema = "experiment/1").
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for reports, figure data, and the run manifest.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 keeps the library default).
    #[arg(long, global = true, value_name = "K")]
    workers: Option<usize>,
    /// Root seed; overrides the configured one.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    /// Turn structural warnings into check failures.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the self-consistent equation at one point or down an eta ladder.
    QveSolve,
    /// Tabulate the density of states on a tau grid.
    Dos,
    /// Locate support intervals, gaps, and density minima.
    Support,
    /// Check resolvent diagonals against the deterministic solution.
    VerifyLocalLaw,
    /// Compare ordered eigenvalues with their classical locations.
    Rigidity,
    /// Bound eigenvector overlaps with fixed probe directions.
    Delocalization,
    /// Check bilinear resolvent forms against the diagonal approximation.
    Anisotropic,
    /// Compare bulk gap statistics against the Gaussian reference ensemble.
    Universality,
    /// Tabulate the deterministic error envelope around a support minimum.
    Envelope,
    /// Bound the distance between two spectral measures from Stieltjes data.
    MeasureDistance,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::QveSolve => "qve-solve",
            Command::Dos => "dos",
            Command::Support => "support",
            Command::VerifyLocalLaw => "verify-local-law",
            Command::Rigidity => "rigidity",
            Command::Delocalization => "delocalization",
            Command::Anisotropic => "anisotropic",
            Command::Universality => "universality",
            Command::Envelope => "envelope",
            Command::MeasureDistance => "measure-distance",
        }
    }
}

fn dispatch(
    command: Command,
    cfg: &config::ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    match command {
        Command::QveSolve => commands::qve_solve(cfg, ctx, man),
        Command::Dos => commands::run_dos(cfg, ctx, man),
        Command::Support => commands::run_support(cfg, ctx, man),
        Command::VerifyLocalLaw => commands::verify_local_law(cfg, ctx, man),
        Command::Rigidity => commands::run_rigidity(cfg, ctx, man),
        Command::Delocalization => commands::run_delocalization(cfg, ctx, man),
        Command::Anisotropic => commands::run_anisotropic(cfg, ctx, man),
        Command::Universality => commands::run_universality(cfg, ctx, man),
        Command::Envelope => commands::run_envelope(cfg, ctx, man),
        Command::MeasureDistance => commands::run_measure_distance(cfg, ctx, man),
    }
}

fn run(cli: Cli) -> u8 {
    let Some(config_path) = cli.config.as_deref() else {
        eprintln!("error: --config <PATH> is required");
        return 2;
    };
    let (cfg, text) = match config::load(config_path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("qvelab-out"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 2;
    }
    let seed = cli.seed.unwrap_or(cfg.run.seed);
    let workers = cli.workers.unwrap_or(cfg.run.workers);
    if workers > 0 {
        // Per-sample seeds are tied to indices, so thread count never
        // changes results; a failure here just means a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let name = cli.command.name();
    let mut man = match RunManifest::begin(name, &text, seed, workers, cli.strict, &out_dir) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let ctx = RunContext {
        out_dir: &out_dir,
        config_dir: config_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new(".")),
        seed,
        strict: cli.strict,
    };
    let result = dispatch(cli.command, &cfg, &ctx, &mut man);
    let (status, code) = match &result {
        Ok(Verdict::Pass) => ("pass".to_string(), 0u8),
        Ok(Verdict::CheckFailed) => ("check-failed".to_string(), 1),
        Err(e) => {
            eprintln!("error: {e}");
            (format!("error: {e}"), e.exit_code())
        }
    };
    if let Err(e) = man.finalize(&status, &out_dir) {
        eprintln!("error: {e}");
        return 2;
    }
    println!("{name}: {status}");
    code
}

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
