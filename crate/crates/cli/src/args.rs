use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const VERSION: &str = env!("ADAGCL_VERSION");

/// Train and evaluate adaptive graph-contrastive recommenders.
///
/// `train` and `experiment` accept any training-config key as an override,
/// e.g. `--lambda1 0.1 --variant edge_drop`; overrides win over `--config`.
#[derive(Debug, Parser)]
#[command(name = "adagcl", version = VERSION, about, long_about = None)]
pub struct Cli {
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw interactions, optionally k-core filter, split and persist.
    Prepare(PrepareArgs),
    /// Train a model on a prepared split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a prepared split.
    Eval(EvalArgs),
    /// Noise-robustness, sparsity or λ₁-sensitivity experiment.
    Experiment(ExperimentArgs),
    /// Write main or contrastive-view embeddings as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Interaction file (`user<TAB>item[...]`).
    #[arg(long)]
    pub input: PathBuf,
    /// `tsv` or `lastfm` (tsv with a header row).
    #[arg(long, default_value = "tsv")]
    pub format: String,
    #[arg(long)]
    pub k_core: Option<usize>,
    #[arg(long, default_value_t = 2023)]
    pub split_seed: u64,
    /// Train, validation and test shares.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.2, 0.1])]
    pub ratios: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SplitModeArg::PerUser)]
    pub split_mode: SplitModeArg,
    /// Split directory (default: `<output root>/split`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitModeArg {
    PerUser,
    Global,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub split: PathBuf,
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write `last.ckpt` every this many epochs.
    #[arg(long, default_value_t = 1)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [20, 40])]
    pub cutoffs: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Test)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Models to compare (`adagcl`, `lightgcn`, `edge_drop`).
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Noise ratios (noise experiment).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// λ₁ values (sweep experiment).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// User-degree group boundaries (sparsity experiment).
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 40])]
    pub user_bounds: Vec<usize>,
    /// Item-degree group boundaries (sparsity experiment).
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20])]
    pub item_bounds: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Noise,
    Sparsity,
    Sweep,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value_t = Which::Main)]
    pub which: Which,
    /// CSV path (default: `<output root>/export-<time>/<which>.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Main,
    View1,
    View2,
}

impl Which {
    pub fn name(self) -> &'static str {
        match self {
            Which::Main => "main",
            Which::View1 => "view1",
            Which::View2 => "view2",
        }
    }
}
