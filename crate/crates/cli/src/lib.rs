//! Experiment runner: `softpos simulate | fuse | identify | design | closedloop`.
//!
//! Exit codes: 0 success, 1 I/O or malformed input data, 2 configuration
//! error, 3 numerical failure.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod timeseries;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("bad input: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Data(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "softpos", version, about = "Head positioning experiments: sensing, fusion, identification and LQG control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed, overrides `seed` in the config.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic sensor streams and a plant excitation record.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Filter and fuse a sensors file.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Sensors CSV; defaults to OUT/sensors.csv.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Identify a state-space model from a `t,u,y` record.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Plant record CSV; defaults to OUT/plant_io.csv.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Design the LQG controller for a model.
    Design {
        #[command(flatten)]
        common: Common,
        /// Model JSON; the built-in bladder plant when omitted.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Simulate the closed loop with fused sensing.
    Closedloop {
        #[command(flatten)]
        common: Common,
        /// Model JSON; the built-in bladder plant when omitted.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Design JSON; designed from the config when omitted.
        #[arg(long, value_name = "PATH")]
        design: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Fuse { common, .. }
            | Command::Identify { common, .. }
            | Command::Design { common, .. }
            | Command::Closedloop { common, .. } => common,
        }
    }
}

pub fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })
}

/// Runs one subcommand and returns its console summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let common = cli.command.common();
    let cfg = load_config(common)?;
    let out = common.out.as_path();
    ensure_dir(out)?;
    match &cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg, out),
        Command::Fuse { input, .. } => {
            let input = input.clone().unwrap_or_else(|| out.join(commands::SENSORS_FILE));
            commands::fuse(&cfg, &input, out).map(|(m, _)| m)
        }
        Command::Identify { input, .. } => {
            let input = input.clone().unwrap_or_else(|| out.join(commands::PLANT_IO_FILE));
            commands::identify(&cfg, &input, out)
        }
        Command::Design { model, .. } => commands::design(&cfg, model.as_deref(), out),
        Command::Closedloop { model, design, .. } => {
            commands::closedloop(&cfg, model.as_deref(), design.as_deref(), out).map(|(m, _)| m)
        }
    }
}
