//! Command-line surface. Every parsed invocation serializes to `run.json`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcconv_core::{ProtocolKind, ShapeKind};
use mcconv_train::{EstimatorKind, Regimen};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "mcconv", version, about = "Monte Carlo convolution experiments on point clouds")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic shape, or a train/test dataset with --dataset.
    Gen(GenArgs),
    /// Resample a cloud with a sampling protocol.
    Resample(ResampleArgs),
    /// Poisson-disk subsample a cloud.
    SamplePd(SamplePdArgs),
    /// Edge filter on a sphere under uniform and ramped sampling.
    Teaser(TeaserArgs),
    /// Time Poisson-disk against farthest-point subsampling.
    Bench(BenchArgs),
    /// Train the normal-estimation network on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint under every sampling protocol.
    Eval(EvalArgs),
    /// Print statistics of a cloud file.
    Inspect(InspectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Resample(_) => "resample",
            Command::SamplePd(_) => "sample-pd",
            Command::Teaser(_) => "teaser",
            Command::Bench(_) => "bench",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Inspect(_) => "inspect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeArg {
    Sphere,
    Torus,
    Box,
    Ellipsoid,
}

impl From<ShapeArg> for ShapeKind {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Sphere => ShapeKind::Sphere,
            ShapeArg::Torus => ShapeKind::Torus,
            ShapeArg::Box => ShapeKind::Box,
            ShapeArg::Ellipsoid => ShapeKind::Ellipsoid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolArg {
    Uniform,
    Split,
    Gradient,
    Lambertian,
    Occlusion,
}

impl From<ProtocolArg> for ProtocolKind {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Uniform => ProtocolKind::Uniform,
            ProtocolArg::Split => ProtocolKind::Split,
            ProtocolArg::Gradient => ProtocolKind::Gradient,
            ProtocolArg::Lambertian => ProtocolKind::Lambertian,
            ProtocolArg::Occlusion => ProtocolKind::Occlusion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvArg {
    Mc,
    Avg,
}

impl From<ConvArg> for EstimatorKind {
    fn from(c: ConvArg) -> Self {
        match c {
            ConvArg::Mc => EstimatorKind::Mc,
            ConvArg::Avg => EstimatorKind::Avg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimenArg {
    Uniform,
    Nonuniform,
}

impl From<RegimenArg> for Regimen {
    fn from(r: RegimenArg) -> Self {
        match r {
            RegimenArg::Uniform => Regimen::Uniform,
            RegimenArg::Nonuniform => Regimen::Nonuniform,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 4096)]
    pub points: usize,
    /// Write a train/test dataset directory instead of one cloud.
    #[arg(long)]
    pub dataset: bool,
    #[arg(long, default_value_t = 2400)]
    pub train: usize,
    #[arg(long, default_value_t = 600)]
    pub test: usize,
    /// Points per stored dataset shape.
    #[arg(long, default_value_t = 4096)]
    pub dense_points: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "sphere,torus,ellipsoid,box")]
    pub shapes: Vec<ShapeArg>,
    /// Keep dataset shapes in their canonical orientation.
    #[arg(long)]
    pub no_rotate: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ResampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub protocol: ProtocolArg,
    /// Keep at most this many of the surviving points.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SamplePdArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Absolute Poisson radius.
    #[arg(long, conflicts_with = "radius_fraction")]
    pub radius: Option<f64>,
    /// Poisson radius as a fraction of the bounding-box diagonal.
    #[arg(long, default_value_t = 0.05)]
    pub radius_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TeaserArgs {
    #[arg(long, default_value_t = 200_000)]
    pub dense_points: usize,
    #[arg(long, default_value_t = 4000)]
    pub points: usize,
    #[arg(long, default_value_t = 1000)]
    pub eval_points: usize,
    /// Receptive radius on the unit sphere.
    #[arg(long, default_value_t = 0.2)]
    pub radius: f64,
    #[arg(long, default_value_t = 18)]
    pub bins: usize,
    /// Lower and upper latitude of the signal band, in radians.
    #[arg(long, default_value_t = -1.2, allow_hyphen_values = true)]
    pub band_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub band_hi: f64,
    /// Convolve a constant signal instead of the band.
    #[arg(long)]
    pub constant: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    pub sizes: Vec<usize>,
    /// Also time one million points.
    #[arg(long)]
    pub million: bool,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "uniform")]
    pub train_regimen: RegimenArg,
    #[arg(long, value_enum, default_value = "mc")]
    pub conv: ConvArg,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Points per shape after resampling.
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    /// Channel width of the first encoder level.
    #[arg(long, default_value_t = 4)]
    pub width: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    /// Halve the learning rate every this many epochs.
    #[arg(long, default_value_t = 20)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 5)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 5)]
    pub eval_seeds: usize,
    /// Use only the first N training shapes.
    #[arg(long)]
    pub max_train: Option<usize>,
    /// Use only the first N test shapes.
    #[arg(long)]
    pub max_test: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Use only the first N shapes of each split.
    #[arg(long)]
    pub max_shapes: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub input: PathBuf,
}
