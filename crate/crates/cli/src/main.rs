//! `drama`: verification suites, complexity benchmark, data generation,
//! training and evaluation.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
//! Log verbosity is read from `DRAMA_LOG` (e.g. `DRAMA_LOG=debug`).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drama::synth::ScenarioKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] drama::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use drama::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
            CliError::Core(e) => match e {
                E::Config(_) | E::Io { .. } | E::Json { .. } | E::Scenario { .. } | E::Container(_) | E::Param(_) => 2,
                E::Diverged { .. } | E::Tensor(_) | E::Ssd(_) => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "drama",
    version,
    about = "State-space planner toolkit: checks, benchmarks, data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Three-way SSD equivalence suite (recurrence, quadratic, chunked).
    EquivCheck(EquivArgs),
    /// Attention vs chunked-SSD cost: flop proxy, counted multiplies, wall time.
    Bench(BenchArgs),
    /// Generate a synthetic scenario set.
    GenData(GenArgs),
    /// Train the planner; resumes when the output checkpoint exists.
    Train(TrainArgs),
    /// Score a checkpoint (or the ground truth) on a scenario set.
    Eval(EvalArgs),
    /// Finite-difference gradient checks over every block.
    GradCheck(GradArgs),
}

#[derive(Debug, Args)]
struct EquivArgs {
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    max_t: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = drama::verify::EQUIV_TOL)]
    tol: f64,
    /// Drop the carried state at one chunk boundary (detector sanity check).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = drama::bench::SCALING_T)]
    t_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize])]
    d_list: Vec<usize>,
    /// Skip the decoder-sized point (T=31, D=128).
    #[arg(long)]
    no_decoder_point: bool,
    #[arg(long, default_value_t = 16)]
    chunk: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    count: usize,
    /// Comma-separated kinds; all kinds when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kinds: Vec<ScenarioKind>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<ScenarioKind, String> {
    s.parse().map_err(|e: drama::Error| e.to_string())
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV log; `<out>/train_log.csv` when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "ground_truth")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report JSON destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score the ground-truth trajectories instead of a model.
    #[arg(long, conflicts_with = "ckpt")]
    ground_truth: bool,
}

#[derive(Debug, Args)]
struct GradArgs {
    /// Run config whose `[model]` table sizes the end-to-end check.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coordinates probed per parameter tensor of each block.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    max_coords: u64,
    /// Coordinates probed per parameter tensor of the full model.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    model_coords: u64,
    #[arg(long, default_value_t = drama::verify::GRAD_TOL)]
    tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DRAMA_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::EquivCheck(a) => commands::equiv_check(a),
        Command::Bench(a) => commands::bench(a),
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
