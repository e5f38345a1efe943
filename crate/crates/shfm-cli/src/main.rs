use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shfm_cli::error::CliError;
use shfm_cli::{cmd_compare, cmd_fit, cmd_predict, cmd_rank, cmd_simulate, CmdOutcome, RunConfig};

/// Hierarchical spatial factor models for multi-indicator areal panels.
#[derive(Parser)]
#[command(name = "shfm", version, about)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides out_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Caps the worker thread pool (chains run in parallel).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured model and write draws, summaries, and ranks.
    Fit,
    /// Fit several models and write the five-criterion comparison table.
    Compare,
    /// Predict the city factor at new sites from a previous fit.
    Predict,
    /// Recompute posterior rank summaries from a previous fit.
    Rank,
    /// Simulate a synthetic dataset from a preset.
    Simulate,
}

fn run(cli: &Cli) -> Result<CmdOutcome, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot size the thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Input("pass --config <file>".into()))?;
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    match cli.command {
        Command::Fit => cmd_fit(&config),
        Command::Compare => cmd_compare(&config),
        Command::Predict => cmd_predict(&config),
        Command::Rank => cmd_rank(&config),
        Command::Simulate => cmd_simulate(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for m in &outcome.messages {
                println!("{m}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
