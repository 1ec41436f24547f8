//! `heatfb` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; exit status 2.
    Usage(String),
    /// A checked property failed; exit status 1.
    Assertion { report: PathBuf, message: String },
    /// Numerical or I/O failure; exit status 1.
    Runtime(String),
    Io(String),
}

impl From<heatfb::Error> for CliError {
    fn from(e: heatfb::Error) -> Self {
        use heatfb::Error::*;
        match e {
            Config(_) | Input(_) | Domain(_) | Resolution(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "heatfb", version, about = "Sampled-data output feedback for 1-D heat equations with a potential")]
pub struct Cli {
    /// TOML experiment configuration; defaults describe the canonical model.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Seed for random initial data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the leading eigenvalues, γ₀ and the number of unstable modes.
    ModelInfo,
    /// Calibrate the Gram constant C0 over the configured range of orders.
    Calibrate {
        #[arg(long)]
        safety_factor: Option<f64>,
    },
    /// Build the feedback law for one (γ, T) and write it as JSON.
    Synthesize {
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long = "T")]
        t: Option<f64>,
        /// Calibration record from `calibrate`; computed on the fly if absent.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Simulate the closed loop under a stored law and check its decay.
    Simulate {
        #[arg(long)]
        law: PathBuf,
        /// `zero`, `mode:<j>`, `random`, `random:<seed>` or `file:<path>`
        /// (JSON array of grid values).
        #[arg(long, default_value = "mode:1")]
        y0: String,
        #[arg(long)]
        periods: Option<usize>,
        #[arg(long)]
        output_dt: Option<f64>,
    },
    /// Synthesize laws over a grid of T and tabulate ‖F_T‖ against m1, m2.
    #[command(name = "sweep-T")]
    SweepT {
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long = "T-grid", value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Synthesize, then simulate from ξ₁ and the configured random seeds and
    /// check the decay guarantees.
    Verify {
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Assertion { report, message }) => {
            eprintln!("check failed: {message} (report: {})", report.display());
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) | Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
