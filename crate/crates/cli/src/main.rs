//! `mu2fl`: run private federated experiments, verification suites, and
//! privacy accounting from a TOML config plus flag overrides.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mu2fl_core::privacy::TrustMode;

#[derive(Debug, Parser)]
#[command(name = "mu2fl", version, about = "Differentially private federated mu2-SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a federated experiment and write trace.csv and result.json.
    Run(Common),
    /// Run verification suites and write verify_report.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite to run (repeatable); `all` selects every suite.
        #[arg(long = "suite")]
        suites: Vec<String>,
        /// Perturb one increment to confirm the detectors fire.
        #[arg(long)]
        inject_bug: bool,
    },
    /// Convert between rho and noise variance and print (epsilon, delta) rows.
    Account {
        #[command(flatten)]
        common: Common,
        /// Increment bound S.
        #[arg(long = "S")]
        s: Option<f64>,
        /// Per-round noise variance.
        #[arg(long = "sigma-sq")]
        sigma_sq: Option<f64>,
    },
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<TrustMode>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long = "M")]
    pub machines: Option<usize>,
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Target delta (repeatable).
    #[arg(long = "delta")]
    pub deltas: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(common) => commands::run(&common),
        Command::Verify {
            common,
            suites,
            inject_bug,
        } => commands::verify(&common, &suites, inject_bug),
        Command::Account { common, s, sigma_sq } => commands::account(&common, s, sigma_sq),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
