//! Command-line front end: data generation, training, evaluation, subgroup
//! reports and hyperparameter sweeps.

mod commands;
mod failure;
mod manifest;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "subgroupte",
    version,
    about = "Joint subgroup identification and treatment-effect estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a randomized trial with known potential outcomes.
    Generate(GenerateArgs),
    /// Train a model with EM and early stopping.
    Train(TrainArgs),
    /// Effect and factual metrics, with a ridge baseline when oracle columns exist.
    Eval(EvalArgs),
    /// Per-subgroup effect distribution and per-sample assignments.
    Report(ReportArgs),
    /// Grid search over loss weights and subgroup count.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub treated: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = -9.0, allow_hyphen_values = true)]
    pub x0_mean: f64,
    #[arg(long, default_value_t = 3.0)]
    pub x0_std: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_var: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum EStepArg {
    PerEpoch,
    PerBatch,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch training log, one JSON record per line.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Fixed kernel bandwidth; defaults to a tenth of the effect spread.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_enum, default_value = "per-epoch")]
    pub e_step: EStepArg,
    /// Replace the attention encoder with a two-layer MLP.
    #[arg(long)]
    pub no_encoder: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ridge penalty of the baseline.
    #[arg(long, default_value_t = 1.0)]
    pub baseline_lambda: f64,
    /// Also report the square root of PEHE.
    #[arg(long)]
    pub pehe_root: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a, &argv),
        Command::Train(a) => commands::train(&a, &argv),
        Command::Eval(a) => commands::eval(&a, &argv),
        Command::Report(a) => commands::report(&a, &argv),
        Command::Sweep(a) => sweep::run(&a, &argv),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let informational = !e.use_stderr();
            let _ = e.print();
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
