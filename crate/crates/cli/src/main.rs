//! `vantage` command-line entry point.
//!
//! Subcommands wire the library stages together through files: `sim`
//! and `probe` produce report files, `detect` turns them into verdict
//! files, `aggregate` turns verdicts into plot tables, and `serve` /
//! `schedule` / `list` / `export` operate the central controller.

mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "vantage",
    version,
    about = "Censorship measurement platform: simulator, probe, detectors, controller, aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated-network operations
    #[command(subcommand)]
    Sim(commands::SimCommand),
    /// Run the probe battery over a transport and write a report file
    Probe(commands::ProbeArgs),
    /// Classify a report file into a verdict file
    Detect(commands::DetectArgs),
    /// Run the central controller service
    Serve(commands::ServeArgs),
    /// Schedule an experiment on a running controller
    Schedule(commands::ScheduleArgs),
    /// List controller state (vantage points or stored reports)
    List(commands::ListArgs),
    /// Export stored reports from a running controller
    Export(commands::ExportArgs),
    /// Compute analyses over verdict/report files and emit plot data
    Aggregate(commands::AggregateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(cmd) => commands::run_sim(cmd),
        Command::Probe(args) => commands::run_probe(args),
        Command::Detect(args) => commands::run_detect(args),
        Command::Serve(args) => commands::run_serve(args),
        Command::Schedule(args) => commands::run_schedule(args),
        Command::List(args) => commands::run_list(args),
        Command::Export(args) => commands::run_export(args),
        Command::Aggregate(args) => commands::run_aggregate(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
