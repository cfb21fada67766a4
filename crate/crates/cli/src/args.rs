use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Sensitivity analysis for multi-treatment causal effects under latent
/// confounding.
#[derive(Debug, Parser)]
#[command(name = "multisens", version)]
pub struct Cli {
    /// Worker threads. Defaults to MULTISENS_THREADS, else one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the treatment factor model and the outcome model.
    Fit(FitArgs),
    /// Worst-case bias and ignorance regions.
    Bounds(BoundsArgs),
    /// Robustness values.
    Rv(RvArgs),
    /// Partial R² benchmarks of observed treatments.
    Calibrate(CalibrateArgs),
    /// Candidate causal model minimizing a norm of unit-wise effects.
    Mcc(MccArgs),
    /// Risk ratios for a probit outcome.
    Rr(RrArgs),
    /// Single-treatment analysis with a noisy proxy of the confounder.
    Proxy(ProxyArgs),
    /// Generate a synthetic dataset with its ground truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Headered CSV of treatments.
    #[arg(long)]
    pub treatments: PathBuf,

    /// Outcome column of the treatments CSV, or a single-column CSV file.
    #[arg(long)]
    pub outcome: Option<String>,

    /// Columns to drop from the treatments.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutcomeKind {
    Gaussian,
    Probit,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimRule {
    EigenGap,
    Holdout,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Confounder dimension.
    #[arg(long, required_unless_present = "select_dim", conflicts_with = "select_dim")]
    pub m: Option<usize>,

    /// Choose the confounder dimension from the data.
    #[arg(long, value_enum)]
    pub select_dim: Option<DimRule>,

    #[arg(long, value_enum, default_value_t = OutcomeKind::Gaussian)]
    pub outcome_kind: OutcomeKind,

    /// Polynomial degree of the empirical outcome mean.
    #[arg(long, default_value_t = 2)]
    pub degree: u32,

    /// Directory for factor_model.json, confounder.json and outcome.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ContrastArgs {
    /// `eJ` (unit change of treatment J, 1-based), a treatment column name,
    /// or `t1.csv,t2.csv` (single-row CSVs). Repeatable.
    #[arg(long)]
    pub contrast: Vec<String>,

    /// One unit contrast per treatment.
    #[arg(long)]
    pub all_unitwise: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub contrasts: ContrastArgs,

    /// Cap on R²: a value, a list `a,b,c` or a grid `start:stop:count`.
    #[arg(long, default_value = "1")]
    pub r2: String,

    /// JSON output file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RvArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub contrasts: ContrastArgs,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Gaussian partial R², or the latent-scale R² of a probit fit.
    #[arg(long, value_enum, default_value_t = OutcomeKind::Gaussian)]
    pub outcome_kind: OutcomeKind,

    /// TSV output file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MccArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// CSV holding the treatment columns the model was fit on.
    #[arg(long)]
    pub treatments: PathBuf,

    /// l1, l2 or linf.
    #[arg(long, default_value = "l1")]
    pub norm: String,

    #[arg(long, default_value_t = 1.0)]
    pub r2_cap: f64,

    /// Overrides the norm's default tolerance.
    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long)]
    pub max_iter: Option<usize>,

    /// Per-treatment TSV report.
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// JSON summary file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RrArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long)]
    pub treatments: PathBuf,

    #[command(flatten)]
    pub contrasts: ContrastArgs,

    /// Caps for the risk-ratio regions, same syntax as `bounds --r2`.
    #[arg(long, default_value = "1")]
    pub r2: String,

    /// Points on the signed-R² curve.
    #[arg(long, default_value_t = 201)]
    pub points: usize,

    /// Unit direction `d` of the curve, comma separated. Defaults to the
    /// direction of largest confounder shift.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub direction: Vec<f64>,

    /// Curve TSV (columns signed_r2 and one risk ratio per contrast).
    #[arg(long)]
    pub curve: Option<PathBuf>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    /// CSV with outcome, treatment and proxy columns.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value = "y")]
    pub y: String,

    #[arg(long, default_value = "t")]
    pub t: String,

    #[arg(long, default_value = "z")]
    pub z: String,

    /// Standardized confounder variances at which to report the adjusted
    /// effect, same syntax as `bounds --r2`.
    #[arg(long)]
    pub sigma_u2: Option<String>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// linear, nonlinear, nonlinear-binary, gwas or proxy.
    #[arg(long)]
    pub preset: String,

    /// Rows (default depends on the preset).
    #[arg(long)]
    pub n: Option<usize>,

    /// Output stem: writes `<stem>.csv` and `<stem>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
}
