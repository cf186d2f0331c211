mod commands;
mod config;
mod error;
mod io;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::MapSource;
use crate::config::RunConfig;
use crate::error::CliError;

/// Cell segmentation pipeline: synthetic data, training, prediction, segmentation, evaluation.
#[derive(Parser)]
#[command(name = "cellseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file (default: $CELLSEG_CONFIG if set).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test dataset with a manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network; writes checkpoints and a CSV log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint up to `train.epochs`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Keep λ fixed at `train.lambda_init` (baseline).
        #[arg(long)]
        fixed_lambda: bool,
    },
    /// Write region and edge probability maps as 16-bit PNG.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "image", required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment images into labelled instances with colour overlays.
    Segment {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, conflicts_with = "maps", required_unless_present = "maps")]
        checkpoint: Option<PathBuf>,
        /// Directory of `<id>_region.png` / `<id>_edge.png` maps from `predict`.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long = "image", required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and ground-truth label images.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration with every key.
    ShowConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => commands::gen_data(&config.resolve()?, &out),
        Command::Train { config, data, out, resume, fixed_lambda } => {
            let mut cfg = config.resolve()?;
            cfg.train.fixed_lambda |= fixed_lambda;
            commands::train(&cfg, &data, &out, resume.as_deref())
        }
        Command::Predict { config, checkpoint, images, out } => {
            commands::predict(&config.resolve()?, &checkpoint, &images, &out)
        }
        Command::Segment { config, checkpoint, maps, images, out } => {
            let source = match (&checkpoint, &maps) {
                (Some(c), _) => MapSource::Checkpoint(c),
                (None, Some(m)) => MapSource::Maps(m),
                (None, None) => return Err(CliError::Config("either --checkpoint or --maps is required".into())),
            };
            commands::segment_images(&config.resolve()?, source, &images, &out)
        }
        Command::Eval { pred_dir, gt_dir, out } => commands::eval(&pred_dir, &gt_dir, &out),
        Command::ShowConfig { config } => {
            print!("{}", config.resolve()?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cellseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
