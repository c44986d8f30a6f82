use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "basisrisk", version, about = "Basis-risk metrics and small-T bias simulation for yield panels")]
pub struct Cli {
    /// Cap on worker threads (all cores when absent). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file of defaults, keyed by subcommand then by flag name.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Basis-risk measures of a yield panel (CSV, one column per field).
    Metrics(MetricsArgs),
    /// Bias of the first-eigenvalue share over a T × N × share grid of
    /// constant-spike models.
    SimulateSpiked(SpikedArgs),
    /// Bias of all measures when a panel's sample covariance is taken as the
    /// population covariance.
    SimulateCalibrated(CalibratedArgs),
    /// Limit bias curve and limit-law summaries of the first-eigenvalue share.
    Asymptotics(AsymptoticsArgs),
    /// Draw one simulated panel and write it as CSV.
    Sample(SampleArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Metrics(_) => "metrics",
            Command::SimulateSpiked(_) => "simulate-spiked",
            Command::SimulateCalibrated(_) => "simulate-calibrated",
            Command::Asymptotics(_) => "asymptotics",
            Command::Sample(_) => "sample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Missing {
    /// Drop fields with missing cells (default).
    #[arg(long, overrides_with = "fail_missing")]
    pub drop_missing: bool,

    /// Refuse panels with missing cells.
    #[arg(long, overrides_with = "drop_missing")]
    pub fail_missing: bool,
}

impl Missing {
    pub fn policy(&self) -> basisrisk::MissingPolicy {
        if self.fail_missing {
            basisrisk::MissingPolicy::Fail
        } else {
            basisrisk::MissingPolicy::Drop
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricsIndex {
    /// Area-yield index: the mean over fields.
    Mean,
    /// First principal component.
    Optimal,
    /// Weights read from `--weights`.
    Weights,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Panel CSV.
    pub panel: PathBuf,

    /// Quantile level of the pseudo-R².
    #[arg(long, default_value_t = basisrisk::quantreg::DEFAULT_TAU)]
    pub tau: f64,

    /// Index used for the per-field R² and the quantile pseudo-R².
    #[arg(long, value_enum, default_value_t = MetricsIndex::Mean)]
    pub index: MetricsIndex,

    /// JSON weights: an array in field order or an object keyed by field id.
    #[arg(long)]
    pub weights: Option<PathBuf>,

    #[command(flatten)]
    pub missing: Missing,

    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct Calibration {
    /// Scale the spike so the population share equals the target at each N (default).
    #[arg(long, overrides_with = "paper_recipe")]
    pub exact_target: bool,

    /// Use a = λ̃/(1-λ̃), b = 1, whose share reaches the target only as N grows.
    #[arg(long, overrides_with = "exact_target")]
    pub paper_recipe: bool,
}

impl Calibration {
    pub fn mode(&self) -> basisrisk::spiked::Calibration {
        if self.paper_recipe {
            basisrisk::spiked::Calibration::LimitRecipe
        } else {
            basisrisk::spiked::Calibration::ExactTarget
        }
    }
}

#[derive(Debug, Args)]
pub struct SpikedArgs {
    /// Sample sizes (periods).
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 20, 100])]
    pub t_grid: Vec<usize>,

    /// Dimensions (fields).
    #[arg(long, value_delimiter = ',', default_values_t = vec![50usize, 200, 500, 1000])]
    pub n_grid: Vec<usize>,

    /// Population first-eigenvalue shares.
    #[arg(long, value_delimiter = ',', default_values_t = basisrisk::harness::default_lambda_grid())]
    pub lambda_grid: Vec<f64>,

    /// Replications per cell.
    #[arg(long, default_value_t = basisrisk::harness::DEFAULT_N_REPS)]
    pub reps: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub calibration: Calibration,

    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantileIndexArg {
    Mean,
    Optimal,
}

#[derive(Debug, Args)]
pub struct CalibratedArgs {
    /// Panel CSV whose sample covariance becomes the population covariance.
    pub panel: PathBuf,

    /// Sample sizes (periods).
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 10, 20])]
    pub t_grid: Vec<usize>,

    /// Replications per sample size.
    #[arg(long, default_value_t = basisrisk::harness::DEFAULT_N_REPS)]
    pub reps: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Quantile level of the pseudo-R².
    #[arg(long, default_value_t = basisrisk::quantreg::DEFAULT_TAU)]
    pub tau: f64,

    /// Index of the quantile pseudo-R² inside each replication.
    #[arg(long, value_enum, default_value_t = QuantileIndexArg::Mean)]
    pub index: QuantileIndexArg,

    /// Periods of the panel used to evaluate the population quantile pseudo-R².
    #[arg(long, default_value_t = basisrisk::harness::DEFAULT_ORACLE_SIZE)]
    pub oracle_size: usize,

    #[command(flatten)]
    pub missing: Missing,

    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    /// Sample sizes (periods).
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize])]
    pub t_grid: Vec<usize>,

    /// Population shares r in (0, 1).
    #[arg(long, visible_alias = "r-grid", value_delimiter = ',', default_values_t = basisrisk::asymptotics::percent_grid())]
    pub lambda_grid: Vec<f64>,

    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Periods to draw.
    #[arg(long, default_value_t = 20)]
    pub t: usize,

    /// Fields of the constant-spike model.
    #[arg(long, default_value_t = 50)]
    pub n: usize,

    /// Population first-eigenvalue share of the constant-spike model.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,

    /// Covariance model as JSON (`{"dense": {"covariance": [[...]]}}` or
    /// `{"spiked": {...}}`); overrides `--n` and `--lambda`.
    #[arg(long, conflicts_with = "panel")]
    pub model: Option<PathBuf>,

    /// Panel CSV whose sample covariance is used; overrides `--n` and `--lambda`.
    #[arg(long)]
    pub panel: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub calibration: Calibration,

    #[command(flatten)]
    pub missing: Missing,

    #[command(flatten)]
    pub output: Output,
}
