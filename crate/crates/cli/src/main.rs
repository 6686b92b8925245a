mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use addbart::sim_design::{Family, ScenarioId};
use clap::{Args, Parser, Subcommand};

use settings::{FileConfig, Outcome};

/// Bayesian additive regression trees with pseudo-Bayes-factor checks of additivity.
#[derive(Parser, Debug)]
#[command(name = "addbart", version)]
struct Cli {
    /// key = value configuration file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for replicates and cross-validation folds
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model and write its draw archive
    Fit(FitArgs),
    /// Compare a single forest against its additive counterpart
    Compare(CompareArgs),
    /// Run a replication study over simulated designs
    Simulate(SimulateArgs),
    /// Write a k-fold assignment
    Folds(FoldsArgs),
    /// Solve the variance-standardized design for one scenario
    Design(DesignArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Input CSV with a header row
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column name
    #[arg(long)]
    pub response: Option<String>,
    /// Treat the response as 0/1
    #[arg(long)]
    pub binary: bool,
    /// Columns expanded into one indicator per level
    #[arg(long, value_delimiter = ',')]
    pub categorical: Option<Vec<String>>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SplitArgs {
    /// Covariates of the first additive block (comma separated names)
    #[arg(long, value_delimiter = ',')]
    pub split_minus: Option<Vec<String>>,
    /// Covariates of the second additive block
    #[arg(long, value_delimiter = ',')]
    pub split_plus: Option<Vec<String>>,
    /// Treatment column for the linear-effect model
    #[arg(long)]
    pub treatment: Option<String>,
    /// Prior mean of the treatment effect
    #[arg(long, allow_hyphen_values = true)]
    pub prior_mean: Option<f64>,
    /// Prior variance of the treatment effect
    #[arg(long)]
    pub prior_var: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ChainArgs {
    /// Trees in the single forest (additive forests get half each)
    #[arg(long)]
    pub trees: Option<usize>,
    /// Trees per additive component, overriding the half-tree rule
    #[arg(long)]
    pub component_trees: Option<usize>,
    /// Burn-in iterations
    #[arg(long)]
    pub burn: Option<usize>,
    /// Kept draws
    #[arg(long)]
    pub draws: Option<usize>,
    /// Keep every thin-th draw after burn-in
    #[arg(long)]
    pub thin: Option<usize>,
    /// Leaf prior shrinkage k
    #[arg(long)]
    pub k: Option<f64>,
    /// Tree prior base
    #[arg(long)]
    pub base: Option<f64>,
    /// Tree prior power
    #[arg(long)]
    pub power: Option<f64>,
    /// Degrees of freedom of the σ² prior
    #[arg(long)]
    pub sigma_df: Option<f64>,
    /// Prior probability that σ is below the rough data estimate
    #[arg(long)]
    pub sigma_quantile: Option<f64>,
    /// Cutpoints per covariate
    #[arg(long)]
    pub max_cuts: Option<usize>,
    /// Master seed (falls back to ADDBART_SEED)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// single, two or treatment
    #[arg(long)]
    pub model: Option<String>,
    /// Store trees so the archive can predict new rows
    #[arg(long)]
    pub keep_trees: bool,
    /// Archive path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Also compare k-fold out-of-sample prediction error
    #[arg(long)]
    pub ospe: bool,
    /// Folds for --ospe
    #[arg(long)]
    pub folds: Option<usize>,
    /// squared or misclassification
    #[arg(long)]
    pub loss: Option<String>,
    /// Compare two existing archives instead of fitting
    #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"])]
    pub fits: Option<Vec<PathBuf>>,
    /// Report path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',')]
    pub scenario: Option<Vec<ScenarioId>>,
    /// continuous, binary, continuous-treatment, binary-treatment
    #[arg(long, value_delimiter = ',')]
    pub family: Option<Vec<Family>>,
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Sample sizes
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Replicates per cell
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Linear-predictor variance of binary designs
    #[arg(long)]
    pub nu: Option<f64>,
    /// Monte Carlo draws for the design moments
    #[arg(long)]
    pub mc: Option<usize>,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Also score each replicate by k-fold OSPE
    #[arg(long)]
    pub ospe: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Replicate table
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-cell summary table
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FoldsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of rows, when no data file is given
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Outcome<()> {
    let section = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Compare(_) => "compare",
        Command::Simulate(_) => "simulate",
        Command::Folds(_) => "folds",
        Command::Design(_) => "design",
    };
    let file = FileConfig::load(cli.config.as_deref(), section)?;
    if let Some(jobs) = file.value(cli.jobs, "jobs")? {
        if jobs == 0 {
            return Err(settings::Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| settings::Failure::usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => commands::fit(a, &file),
        Command::Compare(a) => commands::compare(a, &file),
        Command::Simulate(a) => commands::simulate(a, &file),
        Command::Folds(a) => commands::folds(a, &file),
        Command::Design(a) => commands::design(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
