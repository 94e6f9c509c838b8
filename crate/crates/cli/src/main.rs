use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diveoff_cli::{
    cmd_adapt, cmd_dataset_entropy, cmd_eval, cmd_gen_data, cmd_train, exit_code, AdaptArgs, EntropyArgs, EvalArgs,
    GenDataArgs, TrainArgs,
};

/// Offline RL experiments on the point-mass corridor task.
#[derive(Parser)]
#[command(name = "diveoff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and normalize a scripted dataset.
    GenData(GenDataArgs),
    /// Train DiveOff or a baseline on a dataset.
    Train(TrainArgs),
    /// Roll out a checkpoint over the latent grid.
    Eval(EvalArgs),
    /// Few-shot adaptation in a walled variant.
    Adapt(AdaptArgs),
    /// Mixture entropy bound of a dataset's states.
    DatasetEntropy(EntropyArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIVEOFF_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::DatasetEntropy(a) => cmd_dataset_entropy(a),
    };
    match res {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
