//! Batch front-end: `pointer <soliton|weights|ensemble|widthsweep|gasmodel>`.
//!
//! Exit codes: 0 success, 1 internal or run failure, 2 configuration error,
//! 3 statistical-test rejection.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Finished};
use crate::config::RunConfig;
use crate::output::Outputs;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "POINTER_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<pointer_core::Error> for CliError {
    fn from(e: pointer_core::Error) -> Self {
        use pointer_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::Config(_) | E::Precondition(_) | E::Domain(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pointer", version, about = "Pointer-state simulations for collisional decoherence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration (schema_version = 1).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $POINTER_OUT/<command> or runs/<command>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides the config value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Grow a soliton from an initial state and write its profile.
    Soliton,
    /// Winner statistics of the packet process with a chi-square test.
    Weights,
    /// Trajectory ensemble against the master-equation reference.
    Ensemble,
    /// Soliton width against kappa and the fitted a_loc.
    Widthsweep,
    /// 3D localization length, pointer width and coherence length.
    Gasmodel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Soliton => "soliton",
            Command::Weights => "weights",
            Command::Ensemble => "ensemble",
            Command::Widthsweep => "widthsweep",
            Command::Gasmodel => "gasmodel",
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, Command::Weights | Command::Ensemble)
    }
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    if let Some(out) = &cfg.out {
        return out.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(cli.command.name())
}

/// Runs the parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(done) => {
            println!("{}", done.summary);
            done.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<Finished, CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::defaults(),
    };
    let seed = cli.seed.or(cfg.seed);
    let workers = cli.workers.or(cfg.workers).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    if cli.command.stochastic() && seed.is_none() {
        return Err(CliError::Config("this run is stochastic: pass --seed or set `seed` in the config".into()));
    }
    // a pool may already exist when running in-process; its size then stays
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    let out_dir = output_dir(cli, &cfg);
    let ctx = Context { cfg, seed, out: out_dir.clone() };
    let mut out = Outputs::create(&ctx.out)?;
    let done = match cli.command {
        Command::Soliton => commands::soliton(&ctx, &mut out),
        Command::Weights => commands::weights(&ctx, &mut out),
        Command::Ensemble => commands::ensemble(&ctx, &mut out),
        Command::Widthsweep => commands::widthsweep(&ctx, &mut out),
        Command::Gasmodel => commands::gasmodel(&ctx, &mut out),
    }?;
    let mut echo = ctx.cfg.clone();
    echo.seed = seed;
    echo.workers = Some(workers);
    echo.out = Some(out_dir);
    out.finish(cli.command.name(), seed, workers, &echo, &done.status)?;
    Ok(done)
}
