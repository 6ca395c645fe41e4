//! `gridsafe` command-line front end: model build with centralized design,
//! γ sweeps, filtered closed-loop simulation, topology reports and manifest
//! replay. Frequencies at this boundary are in Hz.
//!
//! Exit codes: 0 success, 1 usage or validation, 2 numerical failure,
//! 3 safety violation in `simulate`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;
pub mod manifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_SAFETY: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: message.into() }
    }
}

impl From<gridsafe_core::Error> for CliError {
    fn from(e: gridsafe_core::Error) -> Self {
        use gridsafe_core::Error as E;
        let code = match e {
            E::Config(_)
            | E::InvalidParameter { .. }
            | E::Disconnected { .. }
            | E::DuplicateLine { .. }
            | E::Dimension(_)
            | E::Weights(_) => EXIT_USAGE,
            _ => EXIT_NUMERICAL,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gridsafe", version, about = "Sparse and safe microgrid frequency regulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble the model, report its spectrum and write the centralized gain.
    Build(BuildArgs),
    /// Sparse gains over a log-spaced γ grid.
    Sweep(SweepArgs),
    /// Safety-filtered closed-loop simulation.
    Simulate(SimulateArgs),
    /// Cross-layer communication topology of a gain.
    Topology(TopologyArgs),
    /// Re-run a recorded command and compare its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Network config (TOML). Defaults to the built-in 4-bus case.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Print a machine-readable summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub gamma_min: Option<f64>,
    #[arg(long)]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    pub gamma_count: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Gain document; the centralized gain is used when omitted.
    #[arg(long)]
    pub gain: Option<PathBuf>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub substeps: Option<usize>,
    /// linear | nonlinear
    #[arg(long)]
    pub plant: Option<String>,
    /// zero | constant | step | sinusoid | uniform-random | adversarial
    #[arg(long)]
    pub disturbance: Option<String>,
    /// Disturbance bound in p.u.; also the amplitude of the deterministic kinds.
    #[arg(long)]
    pub ds: Option<f64>,
    #[arg(long)]
    pub eta1: Option<f64>,
    #[arg(long)]
    pub eta2: Option<f64>,
    /// Symmetric safety band half-width in Hz.
    #[arg(long)]
    pub omega_band_hz: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeded runs with random initial states.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Initial angles are drawn from [0, theta_max] rad.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub theta_max: f64,
    /// Switching time of the step disturbance.
    #[arg(long, default_value_t = 1.0)]
    pub step_time: f64,
    /// Frequency of the sinusoidal disturbance in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub sine_hz: f64,
    /// Settling tolerance on the state infinity norm.
    #[arg(long, default_value_t = 1e-2)]
    pub settle_tol: f64,
}

#[derive(Debug, Args)]
pub struct TopologyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub gain: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "out-replay")]
    pub out_dir: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli.command, &raw) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
