//! The `sepfront` command line: estimation, frontier enumeration, training, sweeps and reports.

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

mod commands;
pub mod error;
pub mod manifest;
pub mod plot;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sepfront", version, about = "Separation-utility frontiers and CMI-regularized training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate I(U;Z|Y) from a batch CSV, with bias correction and bounds.
    Estimate(commands::estimate::Args),
    /// Enumerate deterministic predictors of a finite joint and compute its frontiers.
    Frontier(commands::frontier::Args),
    /// Train one regularized model on one fold.
    Train(commands::train::Args),
    /// Train and evaluate every (lambda, fold) cell.
    Sweep(commands::sweep::Args),
    /// Aggregate a results CSV into per-lambda mean and standard deviation.
    Report(commands::report::Args),
    /// Draw a synthetic dataset from a finite joint.
    Generate(commands::generate::Args),
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate::run(a, stdout),
        Command::Frontier(a) => commands::frontier::run(a, stdout),
        Command::Train(a) => commands::train::run(a, stdout),
        Command::Sweep(a) => commands::sweep::run(a, stdout, stderr),
        Command::Report(a) => commands::report::run(a, stdout),
        Command::Generate(a) => commands::generate::run(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
