mod args;
mod commands;
mod output;
mod plot;

use args::{Cli, Command};
use clap::Parser;
use std::process::ExitCode;
use vmsc::Error;

/// 2 for usage and I/O problems, 3 for bad data, 4 for numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::ConstraintViolation(_) | Error::Io { .. } => 2,
        Error::Shape(_) | Error::Structure(_) | Error::Alignment(_) | Error::Format(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("VF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("VF_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot size thread pool: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::PruneSweep(a) => commands::prune_sweep_cmd(a),
        Command::FractionSweep(a) => commands::fraction_sweep_cmd(a),
        Command::Csc(a) => commands::csc(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
