use std::path::PathBuf;
use std::process::ExitCode;

use cecf_core::Regularizer;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod output;

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "cecf",
    version,
    about = "Causal edge classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic attributed graph.
    Gen(GenArgs),
    /// Train on a dataset directory and evaluate on the test split.
    Train(TrainArgs),
    /// Train once per gamma value and tabulate test metrics.
    Sweep(SweepArgs),
    /// Metrics, CCA, HSIC, grouped Shapley and tendency analysis of a checkpoint.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of the training objectives on a 6-node graph.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML or JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegularizerArg {
    Adversarial,
    Hsic,
    None,
}

impl From<RegularizerArg> for Regularizer {
    fn from(r: RegularizerArg) -> Self {
        match r {
            RegularizerArg::Adversarial => Regularizer::Adversarial,
            RegularizerArg::Hsic => Regularizer::Hsic,
            RegularizerArg::None => Regularizer::None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Directory holding nodes.csv and edges.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub regularizer: Option<RegularizerArg>,
    #[arg(long)]
    pub hsic_weight: Option<f64>,
    /// Learning rate of encoder and head.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_probe: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Comma-separated gamma values.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Second checkpoint used as the baseline of the tendency study.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Test edges sampled for Shapley attribution.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    Elu,
    Matmul,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Test hook: corrupt one backward rule.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CECF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "CECF_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
