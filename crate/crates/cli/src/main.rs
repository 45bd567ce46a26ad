use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

use commands::{CliError, Context};

#[derive(Parser, Debug)]
#[command(name = "mdca", version, about = "Multipath competitive sparse coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (`key = value` per line)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Model file to write (train) or read (all other commands)
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Stimulation gain; overrides `gain` from the config
    #[arg(long, global = true)]
    gain: Option<f32>,

    /// Output directory; overrides `out_dir` from the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed; overrides `seed` from the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Input image for infer, trace and stimulate; overrides `input`
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Pre-train every pathway on its own image directory
    Train,
    /// Joint inference on one image: reconstruction and per-layer trace
    Infer,
    /// Inference plus per-layer contribution images at snapshot timesteps
    Trace,
    /// Activity-triggered average image for each feature of one layer
    Ata,
    /// Face/non-face activity ratios over two image directories
    Classify,
    /// Inference with mean-response stimulation of one layer
    Stimulate,
    /// Per-label accuracy over a labeled directory tree
    Eval,
    /// Write procedural face-like and texture corpora as PNG files
    Synth {
        /// Images per class
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = mdca::RunConfig::load(&config_path).map_err(CliError::from)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(gain) = cli.gain {
        cfg.gain = gain;
    }
    if let Some(input) = cli.input {
        cfg.input = Some(input);
    }
    cfg.validate().map_err(CliError::from)?;
    let ctx = Context::new(cfg, cli.checkpoint)?;
    match cli.command {
        Command::Train => commands::train(&ctx),
        Command::Infer => commands::infer(&ctx),
        Command::Trace => commands::trace(&ctx),
        Command::Ata => commands::ata(&ctx),
        Command::Classify => commands::classify(&ctx),
        Command::Stimulate => commands::stimulate(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Synth { count } => commands::synth(&ctx, count),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
