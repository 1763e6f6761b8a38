mod adapters;
mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Bad command-line usage (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A broken internal invariant (exit code 3).
#[derive(Debug)]
pub struct Invariant(pub String);

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violated: {}", self.0)
    }
}

impl std::error::Error for Invariant {}

#[derive(Debug, Parser)]
#[command(name = "mcx", version, about = "Top-k match-count search over inverted indexes")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a dataset and write its index.
    Build(commands::BuildArgs),
    /// Run a batch of queries against a stored index.
    Query(commands::QueryArgs),
    /// Print how many LSH functions a similarity estimate needs.
    EstimateM(commands::EstimateArgs),
    /// Time build, load and query stages for each selector.
    Bench(commands::BenchArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause
            .downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
        {
            // reader went away, e.g. piped into head
            return 0;
        }
        if cause.is::<Usage>() {
            return 1;
        }
        if cause.is::<Invariant>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<mcx_core::Error>() {
            if e.is_invariant_violation() {
                return 3;
            }
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Build(a) => commands::build(&a),
        Command::Query(a) => commands::query(&a),
        Command::EstimateM(a) => commands::estimate_m(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if code != 0 {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
