//! Experiment harness for density-scaled softmax classifiers: data
//! generation, training, evaluation, plots and latency benchmarks.

pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod svg;

pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};

use cli::{Cli, Command};

/// Runs one parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(a) => commands::run(a),
        Command::Surface(a) => commands::surface(a).map(drop),
        Command::HistLikelihood(a) => commands::hist_likelihood(a).map(drop),
        Command::Reliability(a) => commands::reliability(a).map(drop),
        Command::Bench(a) => commands::bench(a).map(drop),
        Command::Compare(a) => commands::compare(a).map(drop),
        Command::GenData(a) => commands::gen_data(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}
