//! `panelgap` command-line front end.
//!
//! Exit codes: 0 success, 2 data or usage error, 3 solver did not converge
//! (reports are still written and flagged).

mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Status;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Estimate(a) => commands::estimate(a, cli.jobs),
        Command::Placebo(a) => commands::placebo(a, cli.jobs),
        Command::Sdid(a) => commands::sdid(a, cli.jobs),
        Command::Cv(a) => commands::cv(a, cli.jobs),
        Command::Simulate(a) => commands::simulate(a, cli.jobs),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: solver did not converge; results were written and flagged");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
