use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Hyperparameter optimization: parallel runs, benchmarks and result export.
#[derive(Debug, Parser)]
#[command(name = "hpo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an optimization described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Port of the trial server; 0 picks a free port.
        #[arg(long, env = "SHERPA_PORT")]
        port: Option<u16>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        no_dashboard: bool,
    },
    /// Compare algorithms on a synthetic suite.
    Bench {
        /// sphere, branin or step-decay-curves
        #[arg(long)]
        suite: String,
        /// Comma-separated algorithm names; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<String>,
        /// Trials per run.
        #[arg(long, default_value_t = 30)]
        budget: usize,
        /// Number of seeds.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Convert results.jsonl to another format.
    Export {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Defaults to the input path with the format's extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Show the trials of a running server.
    Status {
        /// host:port of the trial server
        #[arg(long)]
        server: String,
    },
    /// Ask a running server to stop a trial.
    Stop {
        #[arg(long)]
        server: String,
        trial_id: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(tracing::Level::WARN).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, port, seed, output_dir, no_dashboard } => {
            commands::run(&config, &config::Overrides { port, seed, output_dir, no_dashboard })
        }
        Command::Bench { suite, algorithms, budget, seeds, seed, output_dir } => {
            commands::bench(&suite, algorithms, budget, seed..seed + seeds, &output_dir)
        }
        Command::Export { results, format, output } => commands::export(&results, format, output),
        Command::Status { server } => commands::status(&server),
        Command::Stop { server, trial_id } => commands::stop(&server, trial_id),
    };
    match outcome {
        Ok(code) => code.into(),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            failure.code.into()
        }
    }
}
