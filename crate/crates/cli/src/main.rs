mod args;
mod commands;
mod error;
mod input;
mod output;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command, RunArgs};
use crate::error::CliError;

fn init_threads(run: &RunArgs) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    if run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(run.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if run.threads > 1 {
        log::warn!("built without the parallel feature; --threads {} ignored", run.threads);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Aggregate(a) => {
            init_threads(&a.run)?;
            commands::cmd_aggregate(a)
        }
        Command::Rank(a) => {
            init_threads(&a.run)?;
            commands::cmd_rank(a, false)
        }
        Command::Flip(a) => {
            init_threads(&a.run)?;
            commands::cmd_rank(a, true)
        }
        Command::Fold(a) => {
            init_threads(&a.run)?;
            commands::cmd_fold(a)
        }
        Command::Eval(a) => {
            init_threads(&a.run)?;
            commands::cmd_eval(a)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DPMI_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::Usage(first.trim_start_matches("error: ").to_string()).to_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::FAILURE
        }
    }
}
