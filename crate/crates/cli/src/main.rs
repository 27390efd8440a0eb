mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use pcanet_core::{Error, ErrorClass};

use args::{Cli, Command};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// Flag that carries each core parameter name, for error messages.
fn flag_for(param: &str) -> Option<&'static str> {
    Some(match param {
        "k1" | "k2" => "--k",
        "L1" | "l1" => "--l1",
        "L2" | "l2" => "--l2",
        "h1" => "--h1",
        "h2" => "--h2",
        "R" | "r" | "overlap" => "--r",
        "log-base" => "--log-base",
        "train_count" | "test_count" | "split" => "--split",
        _ => return None,
    })
}

fn report(err: &Error) -> u8 {
    match err {
        Error::Precondition { param, .. } => match flag_for(param) {
            Some(flag) => eprintln!("error: {err} (flag {flag})"),
            None => eprintln!("error: {err}"),
        },
        _ => eprintln!("error: {err}"),
    }
    match err.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "info"
    } else {
        "warn"
    }))
    .init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Convert(a) => commands::convert(a),
        Command::Train(a) => commands::train(a),
        Command::Extract(a) => commands::extract(a),
        Command::Energy(a) => commands::energy(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Fit(a) => commands::fit(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(report(&e)),
    }
}
