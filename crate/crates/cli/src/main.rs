//! `ldpbl`: run blacklisting experiments from the command line.
//!
//! Exit codes: 0 on success, 2 on a configuration error, 3 on an I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BlacklistEvalArgs, GenDataArgs, SimulateArgs, TablesArgs};
use config::{load_config, CliError, Resolver};

#[derive(Parser, Debug)]
#[command(name = "ldpbl", version, about = "Private collaborative phone blacklisting experiments")]
struct Cli {
    /// Flat key = value file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run repeated month-long experiments and write the metrics CSV.
    Simulate(SimulateArgs),
    /// Write a synthetic complaint month as CSV.
    GenData(GenDataArgs),
    /// Print the threshold and budget tables.
    Tables(TablesArgs),
    /// Run one month and report the blacklist day by day.
    BlacklistEval(BlacklistEvalArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => Default::default(),
    };
    let mut r = Resolver::new(file);
    if let Some(threads) = r.get("threads", cli.threads)? {
        if threads == 0 {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        ldp_blacklist::par::set_threads(threads);
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&mut r, a),
        Command::GenData(a) => commands::gen_data(&mut r, a),
        Command::Tables(a) => commands::tables(a),
        Command::BlacklistEval(a) => commands::blacklist_eval(&mut r, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ldpbl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
