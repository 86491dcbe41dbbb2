use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sofar::penalty::{Penalty, PenaltyKind};
use sofar::simulate::Method;
use sofar::solver::SofarConfig;
use sofar::tuning::Criterion;

#[derive(Debug, Parser)]
#[command(name = "sofar", version, about = "Sparse orthogonal factor regression")]
pub struct Cli {
    /// Worker threads for replicate and grid parallelism.
    #[arg(long, global = true, env = "SOFAR_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a fixed penalty triple.
    Fit(FitArgs),
    /// Select the penalty triple along the tuning ray.
    Tune(TuneArgs),
    /// Monte Carlo comparison on a simulated model.
    Simulate(SimulateArgs),
    /// Sparse principal component analysis.
    Pca(PcaArgs),
    /// Biclustering of a data matrix.
    Bicluster(AppArgs),
    /// Sparse factor analysis of a multivariate series.
    Factor(AppArgs),
    /// Sparse vector autoregression with augmenting series.
    Var(VarArgs),
    /// Theory diagnostics.
    #[command(subcommand)]
    Diag(DiagCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyChoice {
    L1,
    Group,
}

impl PenaltyChoice {
    pub fn penalty(self) -> Penalty {
        match self {
            PenaltyChoice::L1 => Penalty::new(PenaltyKind::EntrywiseL1),
            PenaltyChoice::Group => Penalty::new(PenaltyKind::RowwiseGroup),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FactorStorage {
    /// Factors as nested arrays inside the JSON.
    Inline,
    /// Factors as CSV files next to the output, referenced by path.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionChoice {
    Gic,
    Cv,
    Valid,
}

impl CriterionChoice {
    pub fn criterion(self) -> Criterion {
        match self {
            CriterionChoice::Gic => Criterion::Gic,
            CriterionChoice::Cv => Criterion::KFoldCv,
            CriterionChoice::Valid => Criterion::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PcaVariant {
    Regression,
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    SofarL,
    SofarGl,
    Lasso,
    Rrr,
    Ols,
    Srrr,
}

impl MethodChoice {
    pub fn method(self) -> Method {
        match self {
            MethodChoice::SofarL => Method::SofarL,
            MethodChoice::SofarGl => Method::SofarGl,
            MethodChoice::Lasso => Method::Lasso,
            MethodChoice::Rrr => Method::Rrr,
            MethodChoice::Ols => Method::Ols,
            MethodChoice::Srrr => Method::Srrr,
        }
    }
}

/// Output destination and factor storage.
#[derive(Debug, Args)]
pub struct OutputArgs {
    /// JSON result file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// How fitted factors are emitted; `csv` requires `--out`.
    #[arg(long, value_enum, default_value_t = FactorStorage::Inline)]
    pub factors: FactorStorage,
}

/// Input matrices share this flag.
#[derive(Debug, Args)]
pub struct CsvArgs {
    /// Skip the first line of every input CSV.
    #[arg(long)]
    pub header: bool,
}

/// Augmented Lagrangian settings.
#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    pub mu0: f64,
    #[arg(long, default_value_t = 1.05)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e8)]
    pub mu_max: f64,
    #[arg(long, default_value_t = 10)]
    pub inner_sweeps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub inner_tol: f64,
    #[arg(long, default_value_t = 1e-11)]
    pub outer_tol_primal: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub outer_tol_obj: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_outer: usize,
}

impl SolverArgs {
    pub fn config(&self) -> SofarConfig {
        SofarConfig {
            mu0: self.mu0,
            gamma: self.gamma,
            mu_max: self.mu_max,
            inner_sweeps: self.inner_sweeps,
            inner_tol: self.inner_tol,
            outer_tol_primal: self.outer_tol_primal,
            outer_tol_obj: self.outer_tol_obj,
            max_outer: self.max_outer,
            ..SofarConfig::default()
        }
    }
}

/// Penalty triple and kinds for fixed-λ fits.
#[derive(Debug, Args)]
pub struct PenaltyArgs {
    #[arg(long, default_value_t = 0.0)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_a: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_b: f64,
}

#[derive(Debug, Args)]
pub struct RegressionInputs {
    /// Design matrix, n × p.
    #[arg(long)]
    pub x: PathBuf,
    /// Response matrix, n × q.
    #[arg(long)]
    pub y: PathBuf,
    /// Working rank.
    #[arg(long)]
    pub rank: usize,
    #[arg(long, value_enum, default_value_t = PenaltyChoice::L1)]
    pub penalty_a: PenaltyChoice,
    #[arg(long, value_enum, default_value_t = PenaltyChoice::L1)]
    pub penalty_b: PenaltyChoice,
    /// Weight the penalties by reciprocal initial magnitudes.
    #[arg(long)]
    pub adaptive: bool,
    /// Seed for the cross-validation folds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Folds of the Lasso initializer's cross-validation.
    #[arg(long, default_value_t = 5)]
    pub init_folds: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub inputs: RegressionInputs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub inputs: RegressionInputs,
    #[arg(long, value_enum, default_value_t = CriterionChoice::Gic)]
    pub criterion: CriterionChoice,
    /// Validation design for `--criterion valid`.
    #[arg(long)]
    pub x_valid: Option<PathBuf>,
    /// Validation responses for `--criterion valid`.
    #[arg(long)]
    pub y_valid: Option<PathBuf>,
    /// Folds for `--criterion cv`.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 30)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Stop after this many grid points without improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation model, 1 to 5.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub model: u8,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Methods to compare; repeat or separate by commas. Defaults to every
    /// method suited to the model.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodChoice>,
    /// Override the number of predictors.
    #[arg(long)]
    pub p: Option<usize>,
    /// Override the number of responses.
    #[arg(long)]
    pub q: Option<usize>,
    /// Override the sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Working rank.
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    #[arg(long, value_enum, default_value_t = CriterionChoice::Valid)]
    pub criterion: CriterionChoice,
    /// Rows of the independent validation set.
    #[arg(long, default_value_t = 2000)]
    pub validation_rows: usize,
    #[arg(long, default_value_t = 30)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// JSON result file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AppArgs {
    /// Data matrix.
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[arg(long, value_enum, default_value_t = PenaltyChoice::L1)]
    pub penalty_a: PenaltyChoice,
    #[arg(long, value_enum, default_value_t = PenaltyChoice::L1)]
    pub penalty_b: PenaltyChoice,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub app: AppArgs,
    #[arg(long, value_enum, default_value_t = PcaVariant::Regression)]
    pub variant: PcaVariant,
}

#[derive(Debug, Args)]
pub struct VarArgs {
    #[command(flatten)]
    pub app: AppArgs,
    /// Augmenting series with the same number of time points.
    #[arg(long)]
    pub y_aug: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Robust spark of a design by subset enumeration.
    Spark(SparkArgs),
    /// Singular value and factor perturbation bounds.
    Perturb(PerturbArgs),
    /// Error scaling of the initializer and SOFAR across sample sizes.
    Rate(RateArgs),
}

#[derive(Debug, Args)]
pub struct SparkArgs {
    #[arg(long)]
    pub x: PathBuf,
    /// Threshold on the smallest scaled singular value of a column subset.
    #[arg(long)]
    pub c: f64,
    /// Largest subset size enumerated.
    #[arg(long)]
    pub k_max: usize,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Reference coefficient matrix.
    #[arg(long)]
    pub c_star: PathBuf,
    /// Perturbed matrices compared against the reference; repeatable.
    #[arg(long, required = true)]
    pub c_hat: Vec<PathBuf>,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub model: u8,
    #[arg(long, default_value_t = 40)]
    pub p: usize,
    #[arg(long, default_value_t = 20)]
    pub q: usize,
    /// Sample sizes; comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [200, 800])]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
