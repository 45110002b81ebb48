//! `hsps`: photon-number statistics and non-Gaussianity witness for
//! heralded single-photon sources, from time-tag files or built-in source
//! simulators.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error.

mod analyze;
mod curves;
mod error;
mod output;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hsps_core::tagstream::ChannelRoles;

use crate::error::CliError;
use crate::output::OutputFormat;

#[derive(Debug, Parser)]
#[command(name = "hsps", version, about = "Heralded single-photon source statistics")]
struct Cli {
    /// Table format of the output.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Seed for simulations; recorded in every manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Channel roles of the input stream.
    #[arg(long, global = true, default_value = "trigger=0,a=1,b=2", value_parser = parse_roles)]
    channels: ChannelRoles,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Photon statistics and witness for each coincidence window.
    Analyze(analyze::AnalyzeArgs),
    /// Write a simulated time-tag stream.
    Simulate(simulate::SimulateArgs),
    /// Sample the Gaussian-mixture boundary p2(p1).
    Boundary(curves::BoundaryArgs),
    /// Cross-correlation histogram and peak-area ratio.
    G2(curves::G2Args),
    /// Simulate and analyze across values of one source parameter.
    Sweep(simulate::SweepArgs),
}

fn parse_roles(s: &str) -> Result<ChannelRoles, String> {
    ChannelRoles::parse(s).map_err(|e| e.to_string())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Analyze(args) => analyze::run(args, cli.format, &cli.channels, cli.seed),
        Command::Simulate(args) => simulate::run_simulate(args, cli.format, cli.seed),
        Command::Boundary(args) => curves::run_boundary(args, cli.format),
        Command::G2(args) => curves::run_g2(args, cli.format, &cli.channels),
        Command::Sweep(args) => simulate::run_sweep(args, cli.format, cli.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hsps: {e}");
            e.exit_code()
        }
    }
}
