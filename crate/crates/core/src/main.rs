use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use steersim::commands::{cmd_power, cmd_predict, cmd_scan, cmd_simulate, CliOptions};

/// Simulate and analyze entangled-pair steering experiments: analytic
/// interference patterns under two physics backends, event-level Monte
/// Carlo, a projective-element distance scan that bounds the conjectured
/// collapse propagation speed, and event-budget planning.
#[derive(Parser)]
#[command(name = "steersim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON experiment config.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory the output files are written to (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the config's run.seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for the simulation (default: all cores). Outputs are
    /// byte-identical for any value.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Add the non-observable hidden_branch diagnostic column to event logs.
    #[arg(long, global = true)]
    diagnostic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the analytic interference patterns for the configured experiment.
    Predict,
    /// Run the event-level Monte Carlo and write the event log and binned patterns.
    Simulate,
    /// Scan the source-to-filter path, classify each point, and bound the collapse speed.
    Scan,
    /// Compute the events per delay needed to discriminate the two backends.
    Power,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config_path) = cli.config else {
        eprintln!("error: --config <PATH> is required");
        return ExitCode::from(2);
    };
    let Some(out_dir) = cli.out else {
        eprintln!("error: --out <DIR> is required");
        return ExitCode::from(2);
    };
    let config_text = match std::fs::read_to_string(&config_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(2);
        }
    };
    let opts = CliOptions {
        seed: cli.seed,
        threads: cli.threads,
        diagnostic: cli.diagnostic,
    };
    let result = match cli.command {
        Command::Predict => cmd_predict(&config_text, &out_dir, &opts),
        Command::Simulate => cmd_simulate(&config_text, &out_dir, &opts),
        Command::Scan => cmd_scan(&config_text, &out_dir, &opts),
        Command::Power => cmd_power(&config_text, &out_dir, &opts),
    };
    match result {
        Ok(files) => {
            for file in files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
