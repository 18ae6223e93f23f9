//! `emobsim`: scenario generation, plan simulation, policy training and
//! planner comparison from one binary. Every subcommand writes its artifacts
//! plus one run manifest into `--out`; rerunning the manifest's command
//! reproduces the artifacts byte for byte (the manifest timestamp aside).

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod manifest;

/// Validation failures (bad flags, malformed inputs, impossible requests)
/// exit 2, like clap's own usage errors; runtime failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "emobsim", version, about = "Shared-EV deployment simulator and planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario.
    GenScenario(commands::GenScenarioArgs),
    /// Simulate a deployment plan and write the metrics report.
    Simulate(commands::SimulateArgs),
    /// Train the hierarchical policy.
    Train(commands::TrainArgs),
    /// Evaluate a trained checkpoint greedily over seeds.
    Evaluate(commands::EvaluateArgs),
    /// Compare planners over shared seeds.
    Compare(commands::CompareArgs),
    /// Train across a parameter grid and tabulate SC/NV per cell.
    Sweep(commands::SweepArgs),
    /// Export a report's per-day table as CSV.
    ReportDaily(commands::ReportDailyArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenScenario(a) => commands::gen_scenario(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::ReportDaily(a) => commands::report_daily(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Validation(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
