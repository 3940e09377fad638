//! The `nfdp` command line: `budget`, `audit`, `simulate` and `gradcheck`.
//!
//! Subcommand arguments are `key=value` pairs. Exit codes: 0 success, 1
//! runtime or verdict failure, 2 usage or configuration error.

pub mod audit;
pub mod budget;
pub mod chart;
pub mod config;
pub mod gradcheck;
pub mod settings;
pub mod simulate;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Verdict(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Verdict(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nfdp", version, about = "Noise-free DP budgets, audits and federated distillation runs")]
pub struct Cli {
    /// Master seed (64-bit)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for party updates (results do not depend on it)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form (ε, δ): n=… k=… [scheme=with|without|both] [base=nat|log10|both|logvalue],
    /// or n_total=… parties=… k=…; k and parties take ranges a..b
    Budget { args: Vec<String> },
    /// Brute-force audit: [n_max=6] [n_min=2] [n=…] [k=…] [scheme=…] [epsilon=… delta=…]
    Audit { args: Vec<String> },
    /// Run a federation from a key=value config file
    Simulate { config: PathBuf },
    /// Finite-difference gradient sweep: [trials=100] [tolerance=1e-6]
    Gradcheck { args: Vec<String> },
}

fn save(cli: &Cli, name: &str, body: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Budget { args } => {
            let mut buf = Vec::new();
            budget::cmd_budget(args, &mut buf)?;
            out.write_all(&buf)?;
            save(cli, "budget.txt", &buf)
        }
        Command::Audit { args } => {
            let mut buf = Vec::new();
            let result = audit::cmd_audit(args, &mut buf);
            out.write_all(&buf)?;
            save(cli, "audit.csv", &buf)?;
            result
        }
        Command::Simulate { config } => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("nfdp-out"));
            simulate::cmd_simulate(config, &dir, cli.seed, cli.threads, out)
        }
        Command::Gradcheck { args } => gradcheck::cmd_gradcheck(args, cli.seed.unwrap_or(0), out),
    }
}

/// Parses `argv`, runs, and returns the process exit code. Errors go to
/// `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
