use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "density-softmax", version, about = "Train and evaluate density-scaled softmax classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the three-stage pipeline and evaluate it on every configured set.
    Run(RunArgs),
    /// Probability and uncertainty surfaces of a binary model over a 2-D grid.
    Surface(SurfaceArgs),
    /// Histograms of scaled likelihoods per data set.
    HistLikelihood(HistArgs),
    /// Reliability diagram data for one data set.
    Reliability(ReliabilityArgs),
    /// Parameter counts and single-sample latency.
    Bench(BenchArgs),
    /// Train ERM, density-softmax and an ensemble on the same data and
    /// tabulate their metrics.
    Compare(CompareArgs),
    /// Write the configured data sets as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// Experiment config (JSON).
    #[arg(value_name = "CONFIG")]
    pub positional: Option<PathBuf>,
    #[arg(long = "config", value_name = "PATH")]
    pub flag: Option<PathBuf>,
}

impl ConfigArg {
    pub fn path(&self) -> Result<&PathBuf, crate::CliError> {
        match (&self.positional, &self.flag) {
            (Some(p), None) | (None, Some(p)) => Ok(p),
            (Some(_), Some(_)) => Err(crate::CliError::Config(
                "give the config either positionally or with --config".into(),
            )),
            (None, None) => Err(crate::CliError::Config("a config file is required".into())),
        }
    }
}

/// Where evaluation sets come from.
#[derive(Debug, Clone, Args)]
pub struct SetArgs {
    /// Directory written by `gen-data`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Regenerate the sets from an experiment config.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides both config seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SurfaceArgs {
    /// Model container.
    pub model: PathBuf,
    /// Grid bounds as `xmin,xmax,ymin,ymax`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
          default_values_t = [-2.5, 3.5, -2.5, 5.5])]
    pub bounds: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct HistArgs {
    pub model: PathBuf,
    /// Set tags, e.g. `train iid_test shifted1`.
    #[arg(required = true)]
    pub sets: Vec<String>,
    #[command(flatten)]
    pub source: SetArgs,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct ReliabilityArgs {
    pub model: PathBuf,
    pub set: String,
    #[command(flatten)]
    pub source: SetArgs,
    #[arg(long, default_value_t = density_softmax::metrics::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Model containers to time.
    #[arg(required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long, default_value = "iid_test")]
    pub set: String,
    #[command(flatten)]
    pub source: SetArgs,
    #[arg(long, default_value_t = 50)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Also write `bench.json` here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// `json` prints the report instead of the table.
    #[arg(long, value_enum)]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    pub configs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}
