use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loadcast_cli::{
    cmd_crossval, cmd_evaluate, cmd_predict, cmd_preprocess, cmd_train, cmd_tune, CliError,
    RunConfig, SplitChoice,
};

#[derive(Parser)]
#[command(
    name = "loadcast",
    version,
    about = "Transformer + LSTM load forecasting with PSO tuning"
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "loadcast.json")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for model init, training and the swarm; overrides every section seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, split and standardize the CSV; write the dataset cache and a summary.
    Preprocess,
    /// Train a model; write checkpoint, report and test predictions.
    Train,
    /// Search hyperparameters with the particle swarm.
    Tune,
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
    },
    /// Forecast past the end of a series.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Context CSV; defaults to the configured data file.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        steps: usize,
    },
    /// Blocked K-fold cross-validation.
    Crossval {
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    }
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    match cli.command {
        Command::Preprocess => cmd_preprocess(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Tune => cmd_tune(&cfg),
        Command::Evaluate { checkpoint, split } => cmd_evaluate(&cfg, checkpoint.as_deref(), split),
        Command::Predict {
            checkpoint,
            input,
            steps,
        } => cmd_predict(&cfg, checkpoint.as_deref(), input.as_deref(), steps),
        Command::Crossval { k } => cmd_crossval(&cfg, k),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
