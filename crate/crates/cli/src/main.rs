mod common;
mod eval;
mod inspect;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Multiple-instance case classification with prompt-guided token selection.
#[derive(Parser, Debug)]
#[command(name = "milkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic bag dataset and prompt bank.
    Synth(synth::Args),
    /// Train a model and write the best-validation checkpoint.
    Train(train::Args),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(eval::Args),
    /// Report per-instance activation scores for one case.
    Inspect(inspect::Args),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Inspect(a) => inspect::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(common::exit_code(&e))
        }
    }
}
