//! `idalign`: rotary decay simulation, high-resolution layout planning and
//! position-ID assignment from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::UsageError;

#[derive(Parser)]
#[command(name = "idalign", version, about)]
struct Cli {
    /// JSON file with per-command settings, keyed by subcommand name
    /// (e.g. {"simulate-decay": {"dim": 128}}). Flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo profile of E[(R_0 q).(R_m k)] over relative distances, as CSV.
    SimulateDecay(commands::decay::DecayArgs),
    /// Resolution selection, unpadding and token layout for one image, as JSON.
    PlanLayout(commands::layout::LayoutArgs),
    /// Baseline and/or ID-Align position IDs for a layout, as JSON.
    AssignIds(commands::ids::AssignArgs),
    /// ID-distance and attention-score matrices plus alignment summary.
    AttentionReport(commands::attention::AttentionArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::SimulateDecay(args) => {
            commands::decay::run(args.merge(file.section("simulate-decay")?))
        }
        Command::PlanLayout(args) => {
            commands::layout::run(args.merge(file.section("plan-layout")?))
        }
        Command::AssignIds(args) => commands::ids::run(args.merge(file.section("assign-ids")?)),
        Command::AttentionReport(args) => {
            commands::attention::run(args.merge(file.section("attention-report")?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
