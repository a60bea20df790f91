//! `mbot`: exact, entropic, unbalanced and partial transport between point
//! clouds, mini-batch estimators, diagnostics and the two applications.
//!
//! Exit codes: 0 success, 1 usage, 2 input, 3 solver, 4 resource limit.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mbot::{Error, Metric, Sampling, SolverKind, SolverOptions, SolverRegistry};

#[derive(Debug, Parser, Serialize)]
#[command(name = "mbot", version, about = "Mini-batch optimal transport toolkit")]
pub struct Cli {
    /// Worker threads for parallel batch solves (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Solve one transport problem between two point clouds.
    Solve(SolveArgs),
    /// Mini-batch estimator: sampled, exhaustive or two-stage.
    Minibatch(MinibatchArgs),
    /// Count misspecified mappings of an aggregated plan.
    Census(CensusArgs),
    /// Spread of the mini-batch partial estimator against the number of batches.
    Concentration(ConcentrationArgs),
    /// Mini-batch Wasserstein gradient flow.
    Flow(FlowArgs),
    /// Mini-batch color transfer between two P6 images.
    Color(ColorArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum KindArg {
    Ot,
    Uot,
    Pot,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum MetricArg {
    Euclidean,
    SquaredEuclidean,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::SquaredEuclidean => Metric::SquaredEuclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum SamplingArg {
    WithReplacement,
    WithoutReplacement,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::WithReplacement => Sampling::WithReplacement,
            SamplingArg::WithoutReplacement => Sampling::WithoutReplacement,
        }
    }
}

/// Flags shared by everything that solves transport problems.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "ot")]
    pub kind: KindArg,
    /// Transported fraction for `pot`, in (0, 1].
    #[arg(long = "s")]
    pub s: Option<f64>,
    /// Marginal relaxation for `uot`.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Entropic regularisation; omit (or 0) for exact `ot`/`pot`.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Dummy-to-dummy cost of the partial reduction.
    #[arg(long)]
    pub dummy_cost: Option<f64>,
    /// Sinkhorn stop tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

impl SolverArgs {
    pub fn kind(&self) -> Result<SolverKind, CliError> {
        let name = match self.kind {
            KindArg::Ot => "ot",
            KindArg::Uot => "uot",
            KindArg::Pot => "pot",
        };
        let options = SolverOptions {
            epsilon: self.epsilon,
            tau: self.tau,
            fraction: self.s,
            dummy_cost: self.dummy_cost,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        };
        SolverRegistry::default().kind(name, &options).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn is_entropic(&self) -> bool {
        self.kind == KindArg::Uot || self.epsilon.is_some_and(|e| e > 0.0)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MinibatchArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    /// Batch size.
    #[arg(long)]
    pub m: usize,
    /// Number of batch pairs (ignored by --enumerate and --batches).
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "with-replacement")]
    pub sampling: SamplingArg,
    /// Average over every ordered pair of m-subsets.
    #[arg(long, conflicts_with_all = ["two_stage", "batches"])]
    pub enumerate: bool,
    /// Upper bound on the pairs --enumerate may visit.
    #[arg(long, default_value_t = 1_000_000)]
    pub pair_cap: u128,
    /// Align with one large batch, then cut into blocks of m.
    #[arg(long, requires = "big_batch", conflicts_with = "batches")]
    pub two_stage: bool,
    #[arg(long)]
    pub big_batch: Option<usize>,
    /// Explicit schedule: JSON list of {"source": [...], "target": [...]}.
    #[arg(long)]
    pub batches: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CensusArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Aggregated plan as `i,j,mass` triplets; without it a mini-batch run
    /// with the flags below produces the plan.
    #[arg(long)]
    pub candidate: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Entries above this count as mappings (default 1e-9 exact, 1e-4 entropic).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum ConcentrationMode {
    Value,
    Plan,
}

#[derive(Debug, Args, Serialize)]
pub struct ConcentrationArgs {
    #[arg(long, value_enum, default_value = "value")]
    pub mode: ConcentrationMode,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long = "s")]
    pub s: f64,
    /// Ascending comma-separated list of batch counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k_grid: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Offset of the target Gaussian along the diagonal.
    #[arg(long, default_value_t = 2.0)]
    pub shift: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FlowArgs {
    /// Initial cloud; omit together with --target to use the S-curve setup.
    #[arg(long, requires = "target")]
    pub source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    pub target: Option<PathBuf>,
    /// Points per side of the generated S-curve setup.
    #[arg(long, default_value_t = 1000, conflicts_with = "source")]
    pub sshape_n: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ColorArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output image; defaults to `<out>/transfer.ppm`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.root() {
                Error::InvalidInput(_) | Error::Format(_) | Error::Io(_) => 2,
                Error::SolverFailure(_) | Error::Unsupported(_) | Error::NonFinite(_) => 3,
                Error::ResourceLimit(_) => 4,
                Error::Batch { .. } => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("usage error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mbot: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
