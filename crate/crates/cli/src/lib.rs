//! Command-line front end: dataset synthesis, training, enhancement,
//! evaluation, gradient checks and synthetic experiments.

pub mod args;
pub mod config;
pub mod enhance;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod synth;
pub mod train;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use error::CliResult;

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Enhance(a) => enhance::run_enhance(a),
        Command::Eval(a) => enhance::run_eval(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Experiment(a) => experiment::run(a),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
