//! Pipeline driver behind the `roiskip` binary: scene generation, MGN
//! training, mask inference, readout simulation and energy reporting.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] roiskip::Error),
}

impl CliError {
    /// 1 usage/config, 2 format or io, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => e.exit_code(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "roiskip",
    version,
    about = "Region/row skipping sensor pipeline"
)]
pub struct Cli {
    /// Run configuration (JSON). Falls back to $ROISKIP_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set sensor.mode=region_skip`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write training and held-out synthetic sequences.
    Gen,
    /// Fit the MGN; writes weights and a loss CSV.
    Train,
    /// Infer per-frame masks on the held-out sequence; writes masks and an mIoU/skip CSV.
    Mask,
    /// Read the held-out frames through the sensor; writes digital frames and ledgers.
    Simulate,
    /// Energy report CSV from the simulated ledgers.
    Energy,
    /// Closed-form energy over the configured (s, P, mode) grid.
    Sweep,
    /// Fit energy parameters to the configured targets.
    Calibrate,
    /// Print the resolved configuration.
    Config,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Mask => "mask",
            Command::Simulate => "simulate",
            Command::Energy => "energy",
            Command::Sweep => "sweep",
            Command::Calibrate => "calibrate",
            Command::Config => "config",
        }
    }
}

/// Runs one command on a resolved, validated config and returns its summary fields.
pub fn run(command: Command, config: &RunConfig) -> Result<Value, CliError> {
    config.validate()?;
    match command {
        Command::Gen => commands::gen(config),
        Command::Train => commands::train(config),
        Command::Mask => commands::mask(config),
        Command::Simulate => commands::simulate(config),
        Command::Energy => commands::energy(config),
        Command::Sweep => commands::sweep(config),
        Command::Calibrate => commands::calibrate(config),
        Command::Config => Ok(serde_json::to_value(config).expect("config serializes")),
    }
}
