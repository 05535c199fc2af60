//! `mfa`: generate random wavelet series, analyze coefficient trees, evaluate
//! theoretical spectra and run Monte Carlo validation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mfa_core::MfaError;
use serde::{Deserialize, Serialize};

use commands::{AnalyzeParams, GenerateParams, TheoryParams, ValidateParams};

#[derive(Parser, Debug)]
#[command(name = "mfa", version, about = "Multifractal analysis with wavelet p-leaders")]
struct Cli {
    /// TOML or JSON file with global keys and per-command sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (generate also accepts a tree file path).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tree serialization format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "MFA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a random wavelet series into a coefficient tree.
    Generate(GenerateParams),
    /// Densities, scaling function and empirical spectra of a tree.
    Analyze(AnalyzeParams),
    /// Closed-form spectra, asymptotics and critical indices.
    Theory(TheoryParams),
    /// Monte Carlo comparison of estimates with the theory.
    Validate(ValidateParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Binary,
    Json,
    Csv,
}

impl From<Format> for mfa_core::dyadic::TreeFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Binary => Self::Binary,
            Format::Json => Self::Json,
            Format::Csv => Self::Csv,
        }
    }
}

/// Resolved global settings shared by all commands.
#[derive(Debug, Clone, Serialize)]
pub struct Globals {
    pub out: PathBuf,
    pub format: Format,
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(MfaError),
    GateFailure,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::GateFailure => 1,
            CliError::Core(MfaError::Refusal(_)) => 3,
            CliError::Config(_) | CliError::Core(_) => 2,
        }
    }

    pub fn status(&self) -> &'static str {
        match self.exit_code() {
            1 => "gate_failure",
            3 => "refused",
            _ => "error",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::GateFailure => write!(f, "validation gates failed"),
        }
    }
}

impl From<MfaError> for CliError {
    fn from(e: MfaError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(MfaError::Io(e))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.config.as_deref().map(config::load).transpose()?;
    let cfg = cfg.as_ref();
    let globals = Globals {
        out: config::global(cli.out, cfg, "out")?.unwrap_or_else(|| PathBuf::from(".")),
        format: config::global(cli.format, cfg, "format")?.unwrap_or(Format::Binary),
        seed: config::global(cli.seed, cfg, "seed")?.unwrap_or(0),
        threads: config::global(cli.threads, cfg, "threads")?,
    };
    if let Some(n) = globals.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate(p) => commands::generate(&globals, cfg, p),
        Command::Analyze(p) => commands::analyze(&globals, cfg, p),
        Command::Theory(p) => commands::theory(&globals, cfg, p),
        Command::Validate(p) => commands::validate(&globals, cfg, p),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
