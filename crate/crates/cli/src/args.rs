//! Command-line definitions. Every flag is long-form.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cgm", version, about = "Causal analysis of feed-forward generators")]
pub struct Cli {
    /// TOML file with default flag values; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 = all available cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a seeded or planted generator and save it as manifest + blob.
    MakeModel(MakeModelArgs),
    /// Sample outputs from a model.
    Gen(GenArgs),
    /// Transplant a module from one sample into another.
    Hybrid(HybridArgs),
    /// Elementary influence maps of every channel of a layer.
    Eim(EimArgs),
    /// Preprocess influence maps and cluster them into modules.
    Cluster(ClusterArgs),
    /// Split-half stability of the clustering over a range of K.
    Stability(StabilityArgs),
    /// Individual influence of modules and its regression on module size.
    InfluenceStats(InfluenceStatsArgs),
    /// Test whether a set of variables is a layer.
    CheckLayer(CheckLayerArgs),
    /// Latent ancestors of a set of variables.
    CheckAncestors(CheckAncestorsArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Weight blob; defaults to the file named in the manifest.
    #[arg(long)]
    pub blob: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeModelArgs {
    /// vae_celeba, gan_celeba, vae_cifar, gan_cifar, toy_linear or planted.
    #[arg(long)]
    pub arch: String,
    /// Planted blocks as `LATENTSxCHANNELS`, comma separated.
    #[arg(long, default_value = "4x8,4x8,4x8")]
    pub blocks: String,
    /// Planted output side.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Planted transposed-convolution depth.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Output manifest; the blob is written next to it with extension `.cgmb`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Montage PNG of the samples.
    #[arg(long)]
    pub png: PathBuf,
    /// CSV of the sampled latent vectors.
    #[arg(long)]
    pub latents: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HybridArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Layer holding the module; taken from the clusters file when omitted.
    #[arg(long)]
    pub layer: Option<String>,
    /// Channel list (`0,3,5`), range (`0..7`) or `cluster:N`.
    #[arg(long)]
    pub module: String,
    /// Assignments CSV written by `cluster`, needed for `cluster:N`.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub pairs: usize,
    /// Montage of (original 1, original 2, hybrid) rows.
    #[arg(long)]
    pub png: Option<PathBuf>,
    /// Per-pair report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EimArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value_t = 256)]
    pub pairs: usize,
    /// EIMS output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional montage of the maps.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Nmf,
    Kmeans,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Box-filter window (odd).
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    /// Per-map binarization percentile.
    #[arg(long, default_value_t = 75.0)]
    pub percentile: f64,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub eims: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Nmf)]
    pub method: MethodArg,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    /// Assignments CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional montage of the templates.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub eims: PathBuf,
    /// Single K, inclusive range `2..6`, or list `2,3,5`.
    #[arg(long, default_value = "2..6")]
    pub k: String,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Nmf)]
    pub method: MethodArg,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InfluenceStatsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub layer: Option<String>,
    /// Modules from a clusters CSV (one per cluster).
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Explicit modules, `;`-separated channel lists.
    #[arg(long)]
    pub modules: Option<String>,
    /// Nested prefixes of every planted block (sizes 1..=block size).
    #[arg(long)]
    pub nested: bool,
    #[arg(long, default_value_t = 256)]
    pub pairs: usize,
    /// Per-module CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Regression CSV.
    #[arg(long)]
    pub regression_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VarsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Variables as `node` (all channels) or `node:0,2`, separated by `;`.
    #[arg(long, conflicts_with = "layer")]
    pub vars: Option<String>,
    /// A declared layer name.
    #[arg(long)]
    pub layer: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckLayerArgs {
    #[command(flatten)]
    pub vars: VarsArgs,
}

#[derive(Debug, Args)]
pub struct CheckAncestorsArgs {
    #[command(flatten)]
    pub vars: VarsArgs,
}
