//! `hmdbench` command-line driver: synthesize labeled counter-trace suites,
//! train detectors, run detection, and evaluate operating ranges.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hmdbench",
    about = "Synthetic performance-counter malware-detector workbench",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled benign + malicious trace suite.
    Synth(commands::SynthArgs),
    /// Train one detector for one app archetype from a suite manifest.
    Train(commands::TrainArgs),
    /// Run one model over one trace; exit 0 = clean, 2 = alarms, 1 = error.
    Detect(commands::DetectArgs),
    /// Train-and-score every detector over a suite and emit the report CSVs.
    Evaluate(commands::EvaluateArgs),
    /// Re-render reports (heatmap, summaries) from an evaluation directory.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Detect(args) => return commands::detect_exit(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Report(args) => commands::report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
