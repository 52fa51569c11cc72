use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dpmi", version, about = "Differentially private mutual information ranking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Release the noisy joint and marginal tables
    Aggregate(AggregateArgs),
    /// Rank (feature, partition) pairs by mutual information
    Rank(RankArgs),
    /// Rank partitions per feature (same as `rank --swap`)
    Flip(RankArgs),
    /// Run a cascade of binary rankings
    Fold(FoldArgs),
    /// Epsilon sweep, rank stability and runtime comparison
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Delimited,
    JsonLines,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Tsv,
    JsonLines,
}

#[derive(Debug, Args, Clone)]
pub struct InputArgs {
    /// Input files, read in order
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "delimited")]
    pub format: InputFormat,
    /// Input column names for id,feature,partition,observation
    #[arg(long, default_value = "id,feature,partition,observation")]
    pub columns: String,
}

#[derive(Debug, Args, Clone)]
pub struct PrivacyArgs {
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Failure probability of the censoring threshold
    #[arg(long, default_value_t = 1e-6)]
    pub delta: f64,
    /// Observation clamping bounds, lo,hi
    #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
    pub clamp: String,
    #[arg(long, default_value_t = 1)]
    pub contribution_limit: usize,
    /// Budget weights for joint,feature,partition queries
    #[arg(long, default_value = "0.5,0.25,0.25")]
    pub budget_split: String,
    /// Fixed censoring threshold instead of the derived one
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Pool censored dimensions into an "__other__" category
    #[arg(long)]
    pub other_bucket: bool,
    /// Release exact sums
    #[arg(long)]
    pub no_dp: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long, default_value_t = 1e-16)]
    pub tol: f64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Hash partitions for the group-by
    #[arg(long, default_value_t = 16)]
    pub shards: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tsv")]
    pub output_format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Read a table written by `aggregate` instead of raw records
    #[arg(long, conflicts_with = "input")]
    pub table: Option<PathBuf>,
    /// Rank partitions per feature
    #[arg(long)]
    pub swap: bool,
    /// Emit only the first k rows
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    /// JSON-lines file with one fold per line
    #[arg(long)]
    pub folds: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Emit only the first k rows of each fold's ranking
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Generate data instead of reading it: users=N features=N partitions=N [strength=X] [zipf=X]
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub synth: Vec<String>,
    /// Comma-separated budgets; `off` adds a DP-disabled row
    #[arg(long, default_value = "0.1,0.5,1,2,4,8")]
    pub epsilons: String,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = dpmi::eval::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Rank buckets in stability.tsv
    #[arg(long, default_value_t = 10)]
    pub buckets: usize,
    /// Sweep epsilon whose per-bucket errors go to stability.tsv
    #[arg(long, default_value_t = 1.0)]
    pub stability_epsilon: f64,
    /// Also time batched against per-partition binary ranking
    #[arg(long)]
    pub runtime: bool,
    /// Partitions for the runtime dataset
    #[arg(long)]
    pub partitions: Option<usize>,
    /// Rows for the runtime dataset
    #[arg(long)]
    pub runtime_rows: Option<usize>,
}
