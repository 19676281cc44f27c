use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ivdml", version, about = "DML instrumental-variable estimation with weak-IV-robust inference")]
pub struct Cli {
    /// Worker threads for cross-fitting and simulation. Results do not depend on it.
    #[arg(long, global = true, env = "IVDML_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Homogeneous effect with a Wald interval and a robust confidence set.
    Fit(FitArgs),
    /// Kernel-smoothed effect curve beta(v) on a grid.
    FitHet(FitHetArgs),
    /// Monte-Carlo coverage study on synthetic designs.
    Simulate(SimulateArgs),
    /// Numerical checks of a kernel's normalization.
    CheckKernel(CheckKernelArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Outcome column, by index or header name.
    #[arg(long)]
    pub y: Option<String>,
    /// Treatment column.
    #[arg(long)]
    pub d: Option<String>,
    /// Instrument columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub z: Option<Vec<String>>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Effect modifier column; defaults to the first covariate.
    #[arg(long)]
    pub v: Option<String>,
}

/// Learner names: ols, spline, trees. Per-nuisance flags win over `--learner`.
#[derive(Debug, Args)]
pub struct LearnerArgs {
    /// Learner for every nuisance regression.
    #[arg(long)]
    pub learner: Option<String>,
    /// Learner for E[Y | X].
    #[arg(long)]
    pub learner_l: Option<String>,
    /// Learner for E[D | Z, X].
    #[arg(long)]
    pub learner_phi1: Option<String>,
    /// Learner for E[f | X].
    #[arg(long)]
    pub learner_f: Option<String>,
    /// Learner for the second-stage regression of the fitted instrument on X.
    #[arg(long)]
    pub learner_phi2: Option<String>,
    /// Learner for E[Z | X] in linear mode.
    #[arg(long)]
    pub learner_mu: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimationArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of cross-fitting folds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Repetitions of the cross-fitting split.
    #[arg(long, visible_alias = "repetitions")]
    pub reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Instrument mode: ml or linear.
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub learners: LearnerArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale the spread term of the aggregated variance by N (or N h).
    #[arg(long)]
    pub scale_correction: bool,
    /// JSON config; a previous output file is accepted too. Flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write cross-fitted residuals to this CSV (one file per repetition when S > 1).
    #[arg(long)]
    pub residuals_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SmoothingArgs {
    /// epanechnikov or gaussian.
    #[arg(long)]
    pub kernel: Option<String>,
    /// silverman or undersmooth.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Rate exponent of the bandwidth, h ~ N^(-exponent).
    #[arg(long)]
    pub exponent: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub est: EstimationArgs,
}

#[derive(Debug, Args)]
pub struct FitHetArgs {
    #[command(flatten)]
    pub est: EstimationArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Evaluation points, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    /// Curve CSV path; defaults to the JSON path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Design tokens such as `het,z_nonlin` or `hom,z_lin,5d,strong,s=0.3`. Repeatable.
    #[arg(long)]
    pub dgp: Vec<String>,
    /// Sample size of every design.
    #[arg(long)]
    pub n: Option<usize>,
    /// Monte-Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Repetitions of the cross-fitting split inside each replication.
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Points v at which beta(v) is evaluated, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub targets: Option<Vec<f64>>,
    /// Methods, comma separated: hom_linear_iv, hom_ml_iv, het_linear_iv, het_ml_iv.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub learners: LearnerArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scale_correction: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the report rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckKernelArgs {
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
