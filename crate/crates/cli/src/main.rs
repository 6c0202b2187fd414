//! `beamkit` command line: dataset generation, baseline labels, training
//! and evaluation.

mod commands;
mod failure;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "beamkit", version, about = "Energy-efficient MU-MISO beamforming toolkit")]
struct Cli {
    /// Flat `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a channel dataset.
    Gen(GenArgs),
    /// Label a dataset with an optimization baseline.
    Baseline(BaselineArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained network.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Transmit antennas.
    #[arg(long)]
    pub nt: Option<usize>,
    /// User count; repeat for a mixed-K dataset.
    #[arg(long = "k")]
    pub k: Vec<usize>,
    /// Noise power (inverse average SNR).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Per-user rate floor in bit/s/Hz.
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// train, test or both.
    #[arg(long)]
    pub kind: Option<String>,
    /// normalized or raw.
    #[arg(long = "path-loss")]
    pub path_loss: Option<String>,
    #[arg(long = "p-max")]
    pub p_max: Option<f64>,
    #[arg(long = "p-circuit")]
    pub p_circuit: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// sca or grid.
    pub method: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Labels JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Outer iteration cap (sca).
    #[arg(long = "max-outer")]
    pub max_outer: Option<usize>,
    /// Relative improvement that stops the outer loop (sca).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Direction family searched by the grid: mmse, hzm or both.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long = "power-step")]
    pub power_step: Option<f64>,
    #[arg(long = "alpha-step")]
    pub alpha_step: Option<f64>,
    /// Also write a copy of the dataset carrying the labels.
    #[arg(long)]
    pub attach: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// mmse, hzm or select (both branches).
    #[arg(long)]
    pub scheme: Option<String>,
    /// constant or various.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Rate-floor penalty weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Preset: toy, desk, paper or mlp, optionally suffixed `:mmse`, `:hzm`, `:both`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "val-fraction")]
    pub val_fraction: Option<f64>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<usize>,
    /// Checkpoint path; the epoch log goes to `<out>.log.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Convergence curve as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// mmse, hzm or select.
    #[arg(long)]
    pub mode: Option<String>,
    /// Labels JSON from `baseline`; overrides labels stored in the dataset.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-sample CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Measure single-sample inference time.
    #[arg(long)]
    pub timing: bool,
    /// Untimed passes before measuring.
    #[arg(long)]
    pub warmup: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { failure::EXIT_USAGE } else { failure::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let cfg = cli.config.as_deref();
    let res = match cli.command {
        Command::Gen(a) => commands::gen(a, cfg),
        Command::Baseline(a) => commands::baseline(a, cfg),
        Command::Train(a) => commands::train(a, cfg),
        Command::Eval(a) => commands::eval(a, cfg),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure::exit_code(&e) as u8)
        }
    }
}
