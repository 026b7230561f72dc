//! `hiad`: fit, score and evaluate tiled anomaly detectors from the shell.

mod commands;
mod docs;
mod stage;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hiad_core::error::ErrorCategory;

#[derive(Parser)]
#[command(name = "hiad", version, about = "Tiled high-resolution anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Worker threads for extraction, scoring and evaluation.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Master seed; overrides every seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct Dataset {
    /// Dataset root holding one directory per category.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub category: String,
    /// Reflect-pad images on the bottom and right edges to a size the model accepts.
    #[arg(long)]
    pub pad: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model bundle on the normal training images of a category.
    Fit {
        /// Pipeline configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        dataset: Dataset,
        /// Bundle directory to create.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score images and write heatmaps, raw maps and a scores file.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        /// Output directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Skip the low-resolution branch.
        #[arg(long)]
        no_low_res: bool,
        #[arg(long)]
        pad: bool,
        #[command(flatten)]
        common: Common,
        /// PNG files or directories of PNG files.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Evaluate a bundle on the test split of a category.
    Eval {
        #[arg(long, required_unless_present = "random_detector")]
        bundle: Option<PathBuf>,
        #[command(flatten)]
        dataset: Dataset,
        /// Side of the square evaluation size for pixel metrics.
        #[arg(long, default_value_t = hiad_core::metrics::DEFAULT_EVAL_SIZE)]
        eval_size: usize,
        /// Replace the model by uniform random maps (chance-level control).
        #[arg(long)]
        random_detector: bool,
        /// Directory to create with `report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic dataset from a spec file.
    Synth {
        /// Synthetic dataset spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset root; the category directory is created inside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render which detector handles each patch as a PNG.
    InspectAssignment {
        #[arg(long)]
        bundle: PathBuf,
        /// Image to route; required for feature-based routing.
        #[arg(long)]
        image: Option<PathBuf>,
        /// PNG file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit {
            config,
            dataset,
            out,
            common,
        } => commands::fit(config.as_deref(), &dataset, &out, &common),
        Command::Score {
            bundle,
            out,
            no_low_res,
            pad,
            common,
            images,
        } => commands::score(&bundle, &images, &out, !no_low_res, pad, &common),
        Command::Eval {
            bundle,
            dataset,
            eval_size,
            random_detector,
            out,
            common,
        } => commands::eval(bundle.as_deref(), &dataset, eval_size, random_detector, out.as_deref(), &common),
        Command::Synth { config, out, seed } => commands::synth(&config, &out, seed),
        Command::InspectAssignment {
            bundle,
            image,
            out,
            common,
        } => commands::inspect_assignment(&bundle, image.as_deref(), &out, &common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
