//! Command-line front end: training, evaluation, gradient checks, curve
//! analysis and latency benchmarks. Every command writes JSON (or CSV)
//! and follows one exit-code contract: 0 ok, 1 verification or runtime
//! failure, 2 usage, 3 numeric divergence.

pub mod analyze;
pub mod args;
pub mod bench;
pub mod eval;
pub mod gradcheck;
pub mod manifest;
pub mod setup;
pub mod train;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use setup::EXIT_OK;

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { setup::EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("usage: --threads must be positive");
            return setup::EXIT_USAGE;
        }
        curvewalk::par::init_threads(t);
    }
    let result = match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::AnalyzeCurves(a) => analyze::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}
