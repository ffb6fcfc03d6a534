//! `somno`: sleep staging from single-channel EEG.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use somno::features::MiScaling;
use somno::pipeline::{Normalization, DEFAULT_BOUNDARY_EPOCHS};
use somno::synth::SYNTH_CHANNEL;

#[derive(Debug, Parser)]
#[command(
    name = "somno",
    version,
    about = "Sleep staging from single-channel EEG",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the header, signals and annotation summary of an EDF file.
    Inspect { edf: PathBuf },
    /// Cut one night into labelled, normalized 100 Hz epochs (EPD1).
    Prep(PrepArgs),
    /// Compute statistical features per epoch, optionally ranked by mutual information.
    Features(FeaturesArgs),
    /// Train a model on the nights of a split.
    Train(TrainArgs),
    /// Score a model on an EPD1 file.
    Eval(EvalArgs),
    /// Stage one night and write its hypnogram.
    Predict(PredictArgs),
    /// Serve live inference over TCP.
    Serve(ServeArgs),
    /// Stream an EDF channel to a server as if it were a live device.
    Replay(ReplayArgs),
    /// Write a subject-disjoint k-fold split of the nights in a directory.
    Split(SplitArgs),
    /// Write synthetic PSG/hypnogram EDF pairs.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    Night,
    Epoch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MiScalingArg {
    Rank,
    Std,
}

impl From<MiScalingArg> for MiScaling {
    fn from(s: MiScalingArg) -> Self {
        match s {
            MiScalingArg::Rank => MiScaling::Rank,
            MiScalingArg::Std => MiScaling::Std,
        }
    }
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Night => Normalization::Night,
            NormArg::Epoch => Normalization::Epoch,
        }
    }
}

#[derive(Debug, Args)]
pub struct NightArgs {
    #[arg(long)]
    pub psg: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long, default_value = SYNTH_CHANNEL)]
    pub channel: String,
    /// Wake epochs kept on each side of the sleep period.
    #[arg(long, default_value_t = DEFAULT_BOUNDARY_EPOCHS)]
    pub boundary_epochs: usize,
    /// Night identifier; parsed from a Sleep-EDF file name when omitted.
    #[arg(long)]
    pub night: Option<u32>,
    #[arg(long, value_enum, default_value = "night")]
    pub normalization: NormArg,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[command(flatten)]
    pub night: NightArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rank features by mutual information with the stage, per night.
    #[arg(long)]
    pub mi: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Neighbours of the mutual information estimator.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Per-feature scaling applied before the neighbour search.
    #[arg(long, value_enum, default_value = "rank")]
    pub mi_scaling: MiScalingArg,
    /// Where the ranking CSV goes; printed only when omitted.
    #[arg(long, requires = "mi")]
    pub mi_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of EPD1 files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// JSON with optional "model" and "train" objects.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch training log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub cm: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub night: NightArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_parser = clap::value_parser!(u16))]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "SOMNO_WEIGHTS")]
    pub weights: PathBuf,
    /// Used for clients that leave the choice to the server.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u16).range(0..65535))]
    pub calib_epochs: u16,
    /// Directory for one hypnogram CSV per session.
    #[arg(long)]
    pub hypnogram_dir: Option<PathBuf>,
}

fn parse_speed(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err("speed must be a finite number >= 0".into())
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub psg: PathBuf,
    #[arg(long)]
    pub channel: String,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub port: u16,
    /// Multiple of real time; 0 sends without pacing.
    #[arg(long, default_value = "1", value_parser = parse_speed)]
    pub speed: f64,
    /// Calibration epochs to request; the server's default when omitted.
    #[arg(long, value_parser = clap::value_parser!(u16).range(0..65535))]
    pub calib_epochs: Option<u16>,
    #[arg(long, default_value = "replay")]
    pub device: String,
    /// Also write the received stages as a hypnogram CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Directory of EPD1 files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..1000))]
    pub nights: u32,
    #[arg(long, default_value_t = 240, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(100..))]
    pub rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ExitCode::from(run(std::env::args_os()))
}
