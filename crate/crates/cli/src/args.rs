use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcanet_core::dataio::Dtype;
use pcanet_core::{Exec, LogBase, NetConfig, Overlap};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "pcanet", version, about = "PCANet features, energy ledgers, block sweeps and fits")]
pub struct Cli {
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Convert between the CSV and binary dataset formats.
    Convert(ConvertArgs),
    /// Learn filters, write the model and its energy ledger.
    Train(TrainArgs),
    /// Extract block-histogram features with a trained model.
    Extract(ExtractArgs),
    /// Energy ledger, sign check, overlap decomposition and filter spectrum.
    Energy(EnergyArgs),
    /// Run a resumable hyperparameter sweep.
    Sweep(SweepArgs),
    /// Fit the cubic error model to sweep records.
    Fit(FitArgs),
    /// Compare error with and without the second mean-removal step.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn enabled(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    U8,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Dtype {
        match d {
            DtypeArg::U8 => Dtype::U8,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

fn parse_split(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected train:test, got {s:?}"))?;
    let a = a.trim().parse().map_err(|e| format!("train count {a:?}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("test count {b:?}: {e}"))?;
    Ok((a, b))
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected MxN, got {s:?}"))?;
    let a = a.trim().parse().map_err(|e| format!("rows {a:?}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("cols {b:?}: {e}"))?;
    Ok((a, b))
}

fn parse_overlap(s: &str) -> Result<Overlap, String> {
    let r: f64 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    Overlap::from_ratio(r).map_err(|e| e.to_string())
}

fn parse_log_base(s: &str) -> Result<LogBase, String> {
    s.parse().map_err(|e: pcanet_core::Error| e.to_string())
}

/// Network hyperparameters; defaults are the common 3x3, L=8, h=8, R=0.5 setup.
#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Patch size k1 = k2 (odd).
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub l1: usize,
    #[arg(long, default_value_t = 8)]
    pub l2: usize,
    #[arg(long, default_value_t = 8)]
    pub h1: usize,
    #[arg(long, default_value_t = 8)]
    pub h2: usize,
    /// Block overlap ratio, one of 0.0, 0.1, ..., 0.9.
    #[arg(long, default_value = "0.5", value_parser = parse_overlap)]
    pub r: Overlap,
    /// Skip mean removal before the second stage.
    #[arg(long)]
    pub skip_mean2: bool,
}

impl NetArgs {
    pub fn config(&self) -> NetConfig {
        NetConfig {
            k1: self.k,
            k2: self.k,
            l1: self.l1,
            l2: self.l2,
            h1: self.h1,
            h2: self.h2,
            overlap: self.r,
            skip_second_mean_removal: self.skip_mean2,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset file (binary container or CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Image size for CSV input when images are not square.
    #[arg(long, value_parser = parse_dims, value_name = "MxN")]
    pub dims: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Train and test image counts.
    #[arg(long, value_parser = parse_split, value_name = "TRAIN:TEST")]
    pub split: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub stratified: OnOff,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ExecArgs {
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

impl ExecArgs {
    pub fn exec(&self) -> Exec {
        if self.sequential || self.workers == Some(1) {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Signal-to-noise ratio in dB; `inf` gives noiseless images.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Name stored in the dataset (defaults to the output file stem).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output path; a `.csv` extension writes CSV, anything else the binary container.
    #[arg(long)]
    pub out: PathBuf,
    /// Pixel type of the binary container (defaults to u8 when lossless).
    #[arg(long, value_enum)]
    pub dtype: Option<DtypeArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Model file; the ledger goes to `<out>.ledger.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Override the model's block size and overlap.
    #[arg(long)]
    pub h1: Option<usize>,
    #[arg(long)]
    pub h2: Option<usize>,
    #[arg(long, value_parser = parse_overlap)]
    pub r: Option<Overlap>,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Long-format CSV of non-zero feature entries.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// JSON report; CSV tables are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Sweep grid JSON.
    #[arg(long)]
    pub grid: PathBuf,
    /// Records CSV; analyses go to `<out>.analysis.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue an interrupted sweep.
    #[arg(long)]
    pub resume: bool,
    /// Record per-point wall time (output is no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Recompute filters for every grid point.
    #[arg(long)]
    pub no_cache: bool,
    /// Points per checkpoint.
    #[arg(long, default_value_t = 100)]
    pub chunk: usize,
    /// Stop after this many new points.
    #[arg(long)]
    pub max_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_split, value_name = "TRAIN:TEST")]
    pub split: Option<(usize, usize)>,
    #[arg(long, value_enum)]
    pub stratified: Option<OnOff>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub skip_mean2: bool,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sweep records CSV.
    #[arg(long)]
    pub records: PathBuf,
    /// Fit JSON; the text table goes to `<out>.txt`, the curve to `<out>.curve.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "e", value_parser = parse_log_base)]
    pub log_base: LogBase,
    /// Name printed in the table (defaults to the records file stem).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Filter count used for both stages.
    #[arg(long, default_value_t = 6)]
    pub l: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value = "0.5", value_parser = parse_overlap)]
    pub r: Overlap,
    /// Block sizes h1 = h2 to compare (defaults to 1..=min(32, m, n)).
    #[arg(long, value_delimiter = ',')]
    pub h: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}
