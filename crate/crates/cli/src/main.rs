//! `mscan`: reproducible multi-scenario click-prediction experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CmdError;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mscan",
    about = "Multi-scenario click-prediction experiments: data generation, training, \
             debiased evaluation, ablations, and sweeps",
    version
)]
struct Cli {
    /// INI-style config file; defaults apply for anything unset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set train.alpha=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output root; runs land in <out>/<command>-<confighash>/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed list for multi-seed commands; the first seed also drives
    /// training and initialization (repeatable).
    #[arg(long = "seed", value_name = "N", global = true)]
    seed: Vec<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic interaction log and write events.csv.
    GenData,
    /// Train a model on io.events; writes checkpoint and report.
    Train,
    /// Score io.events' test split with io.checkpoint; writes metrics.
    Eval,
    /// Train and evaluate the 2x2 component grid over run.seeds.
    Ablate,
    /// Sweep the reference constant c or the loss balance alpha.
    Sweep,
    /// Verify model gradients against finite differences.
    GradCheck,
    /// Train and evaluate a single/mix/finetune reference model.
    Baseline,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CmdError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)
        .map_err(|e| CmdError::Config(e.to_string()))?;
    if let Some(out) = &cli.out {
        cfg.out_root = out.clone();
    }
    if !cli.seed.is_empty() {
        cfg.seeds = cli.seed.clone();
        cfg.train.seed = cli.seed[0];
        cfg.model.init_seed = cli.seed[0];
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<PathBuf, CmdError> {
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval => commands::eval_cmd(&cfg),
        Command::Ablate => commands::ablate_cmd(&cfg),
        Command::Sweep => commands::sweep_cmd(&cfg),
        Command::GradCheck => commands::grad_check_cmd(&cfg),
        Command::Baseline => commands::baseline_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
