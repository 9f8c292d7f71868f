//! `muacp`: run scenarios, reproduce the platoon-size table, plot logs.

mod args;
mod commands;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use muacp::Mode;

use crate::args::{parse_grid, parse_seeds};
use crate::commands::RunOptions;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "muacp", version, about = "Uncertainty-aware cooperative lane-change planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario over a seed range, optionally sweeping uncertainty settings.
    Run {
        /// Scenario JSON file, or the name of a bundled preset.
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// `N` for seeds 0..N-1, or an inclusive range `a..b`.
        #[arg(long, default_value = "0..19")]
        seeds: String,
        /// Comma-separated connectivity probabilities.
        #[arg(long)]
        sigma: Option<String>,
        /// Comma-separated fixed confidence scores.
        #[arg(long)]
        rho: Option<String>,
        /// Comma-separated rain rates.
        #[arg(long)]
        rain: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Skip the per-episode JSON-lines logs.
        #[arg(long)]
        no_logs: bool,
    },
    /// Run the 3-AV and 6-AV presets under MUACP, TCM and SEM.
    ReproduceTable1 {
        #[arg(long, default_value = "out/table1")]
        out: PathBuf,
        #[arg(long, default_value = "20")]
        seeds: String,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        no_logs: bool,
    },
    /// Render trajectory and profile charts from episode logs.
    Plot {
        /// Episode log; repeat to overlay several runs.
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// List the bundled scenarios.
    Presets {
        /// Write every preset as JSON into this directory instead.
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

fn workers(n: Option<usize>) -> usize {
    n.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            seeds,
            sigma,
            rho,
            rain,
            out,
            workers: w,
            no_logs,
        } => commands::run(&RunOptions {
            scenario,
            mode,
            seeds: parse_seeds(&seeds)?,
            sigma: sigma.map(|s| parse_grid("sigma", &s)).transpose()?,
            rho: rho.map(|s| parse_grid("rho", &s)).transpose()?,
            rain: rain.map(|s| parse_grid("rain", &s)).transpose()?,
            out,
            workers: workers(w),
            logs: !no_logs,
        }),
        Command::ReproduceTable1 {
            out,
            seeds,
            workers: w,
            no_logs,
        } => commands::reproduce_table1(&out, &parse_seeds(&seeds)?, workers(w), !no_logs).map(|_| ()),
        Command::Plot { logs, out } => {
            for p in commands::plot(&logs, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Presets { export } => commands::presets(export.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MUACP_LOG_LEVEL", "info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
