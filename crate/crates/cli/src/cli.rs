use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "polyckt", version, about = "Train, analyze and simulate HE-friendly polynomial CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a polynomial to an activation and report its max error.
    Approx(ApproxArgs),
    /// Build a toy network and write its graph and initial weights.
    Build(BuildArgs),
    /// Range-aware training followed by polynomial replacement.
    Train(TrainArgs),
    /// Replace activations with polynomials fitted on estimated ranges.
    Polyfy(PolyfyArgs),
    /// Chain-index analysis: bootstraps, depth and latency.
    Analyze(AnalyzeArgs),
    /// Greedy skip placement over the cost matrix.
    PlaceSkips(PlaceSkipsArgs),
    /// Linear skip removal schedule, optionally applied to a graph.
    RemoveSkips(RemoveSkipsArgs),
    /// Fixed-precision mock-HE evaluation.
    Simulate(SimulateArgs),
    /// Bootstrap ratio table from pairs of analyses.
    Report(ReportArgs),
    /// Re-run a command from its manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Remez,
    Lstsq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActFn {
    Relu,
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Resnet,
    Convnext,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Idx,
    #[value(name = "cifar10-bin")]
    Cifar10Bin,
    Synthetic,
}

#[derive(Args, Debug)]
pub struct ApproxArgs {
    /// Activation to approximate.
    #[arg(long = "fn", value_enum)]
    pub function: ActFn,
    /// Polynomial degree; a comma-separated list sweeps degrees.
    #[arg(long, value_delimiter = ',', required = true)]
    pub degree: Vec<usize>,
    /// Fit interval `A,B`.
    #[arg(long, allow_hyphen_values = true, required_unless_present = "range_sweep", conflicts_with = "range_sweep")]
    pub range: Option<String>,
    /// Interpolated ranges `A1,B1..A2,B2,STEPS`.
    #[arg(long, allow_hyphen_values = true)]
    pub range_sweep: Option<String>,
    #[arg(long, value_enum, default_value = "remez")]
    pub method: Method,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long, value_enum, default_value = "resnet")]
    pub arch: Arch,
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    /// Input height and width.
    #[arg(long, default_value_t = 32)]
    pub image: usize,
    #[arg(long, default_value_t = 3)]
    pub in_channels: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Activations per residual block (ResNet only).
    #[arg(long, default_value_t = 3)]
    pub activations_per_block: usize,
    /// Pointwise expansion factor (ConvNeXt only).
    #[arg(long, default_value_t = 1)]
    pub expansion: usize,
    /// Activation for ResNet blocks; ConvNeXt always uses GELU.
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActFn,
    /// Replace activations by `x^D` stand-ins for cost studies.
    #[arg(long)]
    pub degree: Option<usize>,
    /// Drop the residual connections.
    #[arg(long)]
    pub no_skips: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Data directory, or `synthetic`.
    #[arg(long)]
    pub data: String,
    /// Data format; inferred from the directory contents when absent.
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Starting model directory (graph.json and weights.pckt); built from
    /// the configuration when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub range_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Range-loss weight before replacement.
    #[arg(long)]
    pub w_pre: Option<f64>,
    /// Range-loss weight after replacement.
    #[arg(long)]
    pub w_post: Option<f64>,
    /// Range-estimation confidence.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PolyfyArgs {
    /// JSON run configuration; its data, split and fit settings apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model directory (graph.json and weights.pckt).
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Extra margin per side as a fraction of each range's width.
    #[arg(long)]
    pub slack: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct GraphArgs {
    /// Graph JSON.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub graph: Option<PathBuf>,
    /// Model directory (graph.json and weights.pckt).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// HE profile JSON; built-in defaults when absent.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Replace activations by `x^D` stand-ins before analysis.
    #[arg(long)]
    pub degree: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Analyze the graph with its skips removed.
    #[arg(long)]
    pub no_skips: bool,
    /// Name used to pair analyses in `report`.
    #[arg(long, default_value = "model")]
    pub label: String,
    /// Output directory; the summary goes to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlaceSkipsArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Remove existing skips before placing new ones.
    #[arg(long)]
    pub strip: bool,
    /// Stop once the total cost would exceed this.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Place at least this many skips regardless of budget.
    #[arg(long, default_value_t = 0)]
    pub min_skips: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RemoveSkipsArgs {
    /// Epochs over which skips fade out.
    #[arg(long)]
    pub n: usize,
    /// Graph to rescale.
    #[arg(long, requires = "epoch")]
    pub graph: Option<PathBuf>,
    /// Epoch whose scale is applied to `--graph`; 0 leaves skips intact.
    #[arg(long, requires = "graph")]
    pub epoch: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Graph JSON.
    #[arg(long, conflicts_with = "model", requires = "weights", required_unless_present = "model")]
    pub graph: Option<PathBuf>,
    /// Weights file.
    #[arg(long, conflicts_with = "model")]
    pub weights: Option<PathBuf>,
    /// Model directory (graph.json and weights.pckt).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// PCKT file with an `inputs` tensor.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub inputs: Option<PathBuf>,
    /// Use this many seeded synthetic samples as inputs.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Overrides the profile's fractional precision.
    #[arg(long)]
    pub frac_bits: Option<u32>,
    /// Standard deviation of seeded additive noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding `analyze` output directories.
    #[arg(long)]
    pub runs: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this output instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
