//! Command-line front end for the parity-dynamics simulator.
//!
//! Exit codes: 0 on success, 2 for configuration or input validation
//! problems, 3 for numeric failures (non-convergence, trace drift, bond
//! ceiling in strict mode).

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "paritydyn", version, about = "Parity-resolved open-system dynamics on qubit lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured scenario and write trajectory tables
    Simulate {
        /// Run configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. --set run.seed=7 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Fit a measured dataset to a decoherence model
    Fit {
        /// Dataset CSV (time_us,p_x,p_y,shots or time_us,p1,shots)
        #[arg(long)]
        data: PathBuf,
        /// Model variant: fixed_b, free_b, gaussian or t1
        #[arg(long)]
        variant: String,
        /// Detection-frame frequency in Hz (Ramsey variants only)
        #[arg(long = "omega-s-hz", default_value_t = 0.0)]
        omega_s_hz: f64,
        /// Output directory
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Run two configurations and tabulate per-time differences
    Compare {
        #[arg(long = "config-a")]
        config_a: PathBuf,
        #[arg(long = "config-b")]
        config_b: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Emit a staggered dynamical-decoupling pulse schedule
    DdPlan {
        /// Device parameter file (TOML)
        #[arg(long)]
        device: PathBuf,
        /// Decoupling slice length in microseconds
        #[arg(long = "slice-us")]
        slice_us: f64,
        /// Number of slices
        #[arg(long = "n-dd")]
        n_dd: usize,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Check a run configuration without executing it
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, sets } => commands::simulate(config, sets),
        Command::Fit { data, variant, omega_s_hz, out_dir } => {
            commands::fit(data, variant, *omega_s_hz, out_dir)
        }
        Command::Compare { config_a, config_b, out_dir } => {
            commands::compare(config_a, config_b, out_dir)
        }
        Command::DdPlan { device, slice_us, n_dd, out_dir } => {
            commands::dd_plan(device, *slice_us, *n_dd, out_dir)
        }
        Command::Validate { config, sets } => commands::validate(config, sets),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
