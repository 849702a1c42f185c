mod commands;
mod error;
mod manifest;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{evaluate, experiment, fuse, report};
use error::{CliError, CliResult};

/// Spine CT label fusion, segmentation metrics and the phantom
/// identification experiment.
#[derive(Debug, Parser)]
#[command(name = "spinefuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map a dataset's labels to the universal set and fill in pseudo-labels.
    Fuse(fuse::FuseArgs),
    /// Dice, Hausdorff and identification metrics of predictions.
    Evaluate(evaluate::EvaluateArgs),
    /// Train and compare models on ambiguous phantoms over several seeds.
    Phantom(experiment::PhantomArgs),
    /// Train one model on phantoms and save it with a sample prediction.
    TrainDemo(experiment::TrainDemoArgs),
    /// Combine earlier evaluation or experiment reports.
    Report(report::ReportArgs),
}

/// `SPINEFUSE_THREADS` sizes the worker pool; unset means one per core.
fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SPINEFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::config(format!(
            "SPINEFUSE_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new("internal", e.to_string(), error::EXIT_INTERNAL))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match &cli.command {
        Command::Fuse(a) => fuse::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Phantom(a) => experiment::run_phantom(a),
        Command::TrainDemo(a) => experiment::run_train_demo(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.render().to_string().trim_end());
            err.emit();
            return ExitCode::from(err.exit_code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.emit();
            ExitCode::from(e.exit_code)
        }
    }
}
