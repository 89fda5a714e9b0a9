//! `sandboost` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sandboost::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sandboost::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sandboost", version, about = "Sandwich-boosted weighted estimation for grouped partially linear models")]
struct Cli {
    /// Worker threads (1 gives bitwise-reproducible output).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate β in Y = Dβ + g(X) + ε from a grouped CSV file.
    Fit(FitArgs),
    /// Run a Monte-Carlo comparison of weighting methods.
    Simulate(SimulateArgs),
    /// Exact population computations for the worked examples.
    Population(PopulationArgs),
}

/// Boosting hyperparameters for `--weights sandwich-boost`.
#[derive(Debug, Clone, Default, Args)]
pub struct BoostArgs {
    /// Maximum boosting iterations.
    #[arg(long)]
    pub m_stop: Option<usize>,
    /// Step size for the s-function.
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Step size for the correlation parameter.
    #[arg(long)]
    pub lambda_theta: Option<f64>,
    /// Step rule for s: `fixed` or `variable`.
    #[arg(long)]
    pub step: Option<String>,
    /// Interval `lo,hi` searched by the variable step rule.
    #[arg(long)]
    pub lambda_interval: Option<String>,
    /// Shrinkage applied to variable steps.
    #[arg(long)]
    pub shrinkage: Option<f64>,
    /// Lower bound applied to s.
    #[arg(long)]
    pub s_floor: Option<f64>,
    /// Folds for choosing the iteration count (below 2 disables the search).
    #[arg(long)]
    pub cv_folds: Option<usize>,
    /// Base learner: `tree` or `knn`.
    #[arg(long)]
    pub learner: Option<String>,
    /// Depth of tree base learners.
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Minimum leaf size of tree base learners.
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Neighbours for the knn base learner.
    #[arg(long)]
    pub knn_k: Option<usize>,
}

/// Nuisance regression options.
#[derive(Debug, Clone, Default, Args)]
pub struct NuisanceArgs {
    /// Regressor for E[Y|X] and E[D|X]: `l2boost`, `knn` or `mean`.
    #[arg(long)]
    pub nuisance: Option<String>,
    /// Boosting rounds of the l2boost nuisance regressor.
    #[arg(long)]
    pub nuisance_rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column holding the group identifier.
    #[arg(long)]
    pub group_col: Option<String>,
    /// Response column Y.
    #[arg(long)]
    pub response: Option<String>,
    /// Treatment column D.
    #[arg(long)]
    pub treatment: Option<String>,
    /// Comma-separated covariate columns X.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Column whose runs of equal values define subgroups (nested correlation).
    #[arg(long)]
    pub subgroup_col: Option<String>,
    /// Weighting: unweighted, sandwich-boost, ml, gee or hetero-gee.
    #[arg(long)]
    pub weights: Option<String>,
    /// Working correlation: equicorrelated, ar1 or nested.
    #[arg(long)]
    pub correlation: Option<String>,
    /// Cross-fitting folds K.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Sample splits S aggregated by the median.
    #[arg(long)]
    pub splits: Option<usize>,
    /// Use 50 sample splits unless --splits is given.
    #[arg(long)]
    pub multi_split: bool,
    /// Confidence intervals have level 1 - alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the JSON report.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// key = value file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub boost: BoostArgs,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioName {
    Complexity,
    Misspecification,
    CorrMisspec,
    VarMisspec,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Data-generating scenario.
    pub scenario: ScenarioName,
    /// Heteroscedasticity frequency (complexity).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Misspecification level, at least 1 (misspecification).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Group size (corr-misspec, var-misspec).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of groups per repetition.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Monte-Carlo repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full-scale group count and 500 repetitions.
    #[arg(long)]
    pub full: bool,
    /// Comma-separated methods: unweighted, sandwich-boost, ml, gee, hetero-gee, oracle.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Cross-fitting folds K.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Results file; `.json` gives the full record, anything else CSV. Defaults to CSV on stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// key = value file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub boost: BoostArgs,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
}

#[derive(Debug, Args)]
pub struct PopulationArgs {
    #[command(subcommand)]
    pub example: PopulationCommand,
}

#[derive(Debug, Subcommand)]
pub enum PopulationCommand {
    /// ARMA errors with an AR(1) working correlation.
    Example21(Example21Args),
    /// Step-function working variance under a smooth true variance.
    Example22(Example22Args),
}

#[derive(Debug, Args)]
pub struct Example21Args {
    /// `a` (n = 100) or `b` (n = 30).
    #[arg(long)]
    pub setting: char,
    /// Grid points of the scan over ρ.
    #[arg(long, default_value_t = 1999)]
    pub resolution: usize,
    /// Subtract each column's minimum.
    #[arg(long)]
    pub min_subtract: bool,
    /// Scan CSV destination; without it the scan goes to stdout and the summary to stderr.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Example22Args {
    /// Steepness of the true variance.
    #[arg(long)]
    pub lambda: f64,
    /// Location of the variance change.
    #[arg(long)]
    pub mu: f64,
    /// Grid points of the scan over η.
    #[arg(long, default_value_t = 1201)]
    pub resolution: usize,
    /// Subtract each column's minimum.
    #[arg(long)]
    pub min_subtract: bool,
    /// Scan CSV destination; without it the scan goes to stdout and the summary to stderr.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set up thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Population(a) => match a.example {
            PopulationCommand::Example21(a) => commands::example21(a),
            PopulationCommand::Example22(a) => commands::example22(a),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sandboost: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
