//! `chainladder`: classical and robust chain-ladder reserving from the
//! command line.
//!
//! Six subcommands cover the full workflow: `reserve` (point estimates and
//! outlier flags), `bootstrap` (predictive distribution of the reserve),
//! `cdr` (one-year claims development result), `simulate` (synthetic
//! squares), `coverage` (quantile coverage over simulated datasets) and
//! `diagnose` (residual and weight tables). Every run writes machine
//! outputs plus a `manifest.json` recording the exact command, input
//! digest and resolved configuration; re-running the recorded command
//! reproduces the data outputs byte for byte.
//!
//! Exit codes: 0 success, 2 parse errors, 3 fit non-convergence, 4 excess
//! bootstrap failures, 1 anything else.

mod args;
mod commands;
mod manifest;
mod util;

use std::process::ExitCode;

use clap::Parser;

use chainladder::Error;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse(_) => 2,
        Error::NonConvergence { .. } => 3,
        Error::ExcessFailures { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = match &cli.command {
        args::Command::Reserve(a) => commands::cmd_reserve(a, &argv),
        args::Command::Bootstrap(a) => commands::cmd_bootstrap(a, &argv),
        args::Command::Cdr(a) => commands::cmd_cdr(a, &argv),
        args::Command::Simulate(a) => commands::cmd_simulate(a, &argv),
        args::Command::Coverage(a) => commands::cmd_coverage(a, &argv),
        args::Command::Diagnose(a) => commands::cmd_diagnose(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
