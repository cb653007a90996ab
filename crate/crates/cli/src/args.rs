use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "phytoset", version, about = "Plant image dataset assembly and classifier evaluation")]
pub struct Cli {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve occurrence exports against the catalog into image entries.
    Ingest(IngestArgs),
    /// Deduplicate entries and sample the bounded, source-prioritized manifest.
    Sample(SampleArgs),
    /// Assign manifest images to train/validation/test.
    Split(SplitArgs),
    /// Write the training import CSV.
    Export(ExportArgs),
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
    /// Evaluate after summing species scores per genus.
    GenusEval(GenusEvalArgs),
    /// Metric-wise differences between two reports.
    Compare(CompareArgs),
    /// Run the identification HTTP service.
    Serve(ServeArgs),
    /// Descriptive statistics of an entries file or manifest.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// `SOURCE=PATH`; `.zip` files are read as Darwin Core Archives, anything
    /// else as a delimited occurrence table. Repeatable.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<String>,
    /// Keep records outside the configured region.
    #[arg(long)]
    pub no_region: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Supplies canonical names; taxon ids are used otherwise.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub min: Option<usize>,
    #[arg(long)]
    pub max: Option<usize>,
    /// Comma-separated source priority.
    #[arg(long, value_delimiter = ',')]
    pub priority: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub validation: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground truth (`image_id,label_id,source`) for the test split.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Source by split contingency table as JSON.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, requires = "rewrite_to")]
    pub rewrite_from: Option<String>,
    #[arg(long, requires = "rewrite_from")]
    pub rewrite_to: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "pred")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub k_limit: Option<usize>,
    /// Compute with exact rational arithmetic.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `threshold,precision,recall` rows for charting.
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenusEvalArgs {
    #[arg(long = "pred")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    /// Score images through this external scorer.
    #[arg(long)]
    pub scorer_url: Option<String>,
    #[arg(long)]
    pub max_body_bytes: Option<usize>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "stats_input")]
pub struct StatsInput {
    #[arg(long)]
    pub entries: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub input: StatsInput,
    /// Threshold for the species-with-enough-images count on raw entries.
    #[arg(long)]
    pub min: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
