//! Experiment CLI: config-driven training runs, ablation grids, noise
//! sweeps, energy reports, and gradient checks, all emitting
//! machine-readable reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 validation failure
//! (gradient oracle disagreement), 4 I/O or data-format error.

mod commands;
mod config;
mod runner;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hdrp", version, about = "Spiking network experiments with dynamic refractory periods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/out")]
    out: PathBuf,
    /// Override a config key, e.g. --set refractory.mode=none (repeatable).
    #[arg(long = "set", global = true)]
    sets: Vec<String>,
    /// Worker threads for batch parallelism (0 = all cores). Results do not
    /// depend on the thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network per the config and write report + checkpoint.
    Train,
    /// Evaluate a checkpoint on the configured test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the eight-cell refractory ablation grid.
    Ablate,
    /// Train clean LIF and HDRP models and sweep Gaussian eval noise.
    NoiseSweep,
    /// Count synaptic operations and estimate energy for a checkpoint.
    EnergyReport {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare analytic gradients against the finite-difference oracle.
    GradCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // ignore failure if a pool already exists (e.g. in tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let cfg = match ExperimentConfig::load(cli.config.as_deref(), &cli.sets, cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Train => commands::cmd_train(&cfg, &cli.out),
        Command::Eval { checkpoint } => commands::cmd_eval(&cfg, checkpoint, &cli.out),
        Command::Ablate => commands::cmd_ablate(&cfg, &cli.out),
        Command::NoiseSweep => commands::cmd_noise_sweep(&cfg, &cli.out),
        Command::EnergyReport { checkpoint } => {
            commands::cmd_energy_report(&cfg, checkpoint, &cli.out)
        }
        Command::GradCheck => match commands::cmd_grad_check(&cfg, &cli.out) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::map_exit_code(&e) as u8)
        }
    }
}
