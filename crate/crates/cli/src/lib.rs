//! The `wallhack` command line: simulation, calibration, ingest,
//! preprocessing, dataset management, training and live monitoring.

pub mod cmd;
pub mod error;
pub mod provenance;
pub mod session;

use clap::{Parser, Subcommand};

use crate::cmd::data::{DatasetCommand, IngestArgs, PreprocessArgs};
use crate::cmd::learn::{EvalCmd, RunsCmd, TrainCmd};
use crate::cmd::monitor::MonitorCommand;
use crate::cmd::sim::{CalibrateArgs, SimulateArgs, SurveyArgs};
pub use crate::error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(
    name = "wallhack",
    version,
    about = "Through-wall activity sensing from WiFi channel state information"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a session (or the full recording protocol) from a link model.
    Simulate(SimulateArgs),
    /// Mean RSSI at each meter of the hallway.
    Survey(SurveyArgs),
    /// Fit path-loss parameters to measured RSSI anchors.
    Calibrate(CalibrateArgs),
    /// Record frames from UDP, a file or standard input.
    Ingest(IngestArgs),
    /// Filter, segment and normalize one session into windows.
    Preprocess(PreprocessArgs),
    /// Build, split, inspect or import window datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a classifier on a split dataset.
    Train(TrainCmd),
    /// Score a checkpoint on one split.
    Eval(EvalCmd),
    /// Repeat training with consecutive seeds and aggregate test metrics.
    Runs(RunsCmd),
    /// Live telemetry service.
    #[command(subcommand)]
    Monitor(MonitorCommand),
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(args) => cmd::sim::simulate(args),
        Command::Survey(args) => cmd::sim::survey_cmd(args),
        Command::Calibrate(args) => cmd::sim::calibrate_cmd(args),
        Command::Ingest(args) => cmd::data::ingest(args),
        Command::Preprocess(args) => cmd::data::preprocess(args),
        Command::Dataset(cmd) => cmd::data::dataset(cmd),
        Command::Train(args) => cmd::learn::train_cmd(args),
        Command::Eval(args) => cmd::learn::eval_cmd(args),
        Command::Runs(args) => cmd::learn::runs_cmd(args),
        Command::Monitor(cmd) => cmd::monitor::monitor(cmd),
    }
}
