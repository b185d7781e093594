use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sentiscale_cli::{
    cmd_analyze, cmd_experiment, cmd_generate, cmd_run, AnalyzeOptions, Globals, EXIT_OK,
    EXIT_USAGE,
};

/// Auto-scaling simulator for sentiment-driven stream processing.
#[derive(Debug, Parser)]
#[command(name = "sentiscale", version)]
struct Cli {
    /// Master seed (overrides the seed in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `generate`, a trace file path is also accepted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Run replications on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic trace from a TOML spec.
    Generate { spec: PathBuf },
    /// Run one simulation.
    Run { config: PathBuf },
    /// Sweep a policy matrix with replication control.
    Experiment { spec: PathBuf },
    /// Correlate arrival volume with sentiment for a trace or run directory.
    Analyze {
        input: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        bucket_s: f64,
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
        /// EMA span in buckets; 1 disables smoothing.
        #[arg(long, default_value_t = 1)]
        ema_window: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut g = Globals {
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
        ..Globals::default()
    };
    if cli.sequential {
        g.execution = sentiscale::Execution::Sequential;
    }
    let result = match &cli.command {
        Command::Generate { spec } => cmd_generate(spec, &g).map(drop),
        Command::Run { config } => cmd_run(config, &g).map(drop),
        Command::Experiment { spec } => cmd_experiment(spec, &g).map(drop),
        Command::Analyze {
            input,
            bucket_s,
            max_lag,
            ema_window,
        } => cmd_analyze(
            input,
            AnalyzeOptions {
                bucket_s: *bucket_s,
                max_lag: *max_lag,
                ema_window: *ema_window,
            },
            &g,
        )
        .map(drop),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
