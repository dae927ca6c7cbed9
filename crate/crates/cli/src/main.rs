mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(fracid::Error),
    Io(std::io::Error),
}

impl From<fracid::Error> for CliError {
    fn from(e: fracid::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fracid", version, about = "Simulate fractional stochastic evolution equations and identify the exponent s")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: config output_dir, then $FRACID_OUTPUT_DIR, then ./output).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Noise seed; for montecarlo the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one noise realization and write the modal solution.
    Simulate {
        #[arg(long, allow_negative_numbers = true)]
        s: Option<f64>,
        /// Also write the Brownian increments.
        #[arg(long)]
        dump_paths: bool,
    },
    /// Identify s on one noise realization.
    Optimize,
    /// Identify s on an ensemble of realizations.
    Montecarlo,
    /// Moment, norm and regularity checks.
    Diagnose {
        #[arg(long, allow_negative_numbers = true)]
        s: Option<f64>,
    },
    /// Print the admissible exponent interval.
    Admissible,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let loaded = config::load(&path)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let out = loaded.output_dir(cli.output);
    match cli.command {
        Command::Simulate { s, dump_paths } => commands::simulate(&loaded, s, cli.seed, dump_paths, &out),
        Command::Optimize => commands::optimize(&loaded, cli.seed, &out),
        Command::Montecarlo => commands::montecarlo(&loaded, cli.seed, &out),
        Command::Diagnose { s } => commands::diagnose(&loaded, s, cli.seed, &out),
        Command::Admissible => commands::admissible(&loaded, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fracid: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
