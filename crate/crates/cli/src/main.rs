//! `vesselssl`: corpus generation, training, evaluation, prediction and
//! downstream stage classification.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "vesselssl", version, about = "Semi-supervised retinal vessel segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the run configuration comes from. A file wins over a preset; the
/// seed is mandatory either way.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration when no file is given: full, desk or tiny.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-domain corpus, or a staged classification corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        n_labeled: usize,
        #[arg(long, default_value_t = 13)]
        n_unlabeled: usize,
        /// Images in each of the source and target test splits.
        #[arg(long, default_value_t = 5)]
        n_test: usize,
        #[arg(long)]
        image_size: Option<usize>,
        /// Write a four-class staged corpus with this many images per class instead.
        #[arg(long)]
        staged: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a segmentation model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Ablation level: supervised, I, II, III, IV or V.
        #[arg(long)]
        ablation: Option<String>,
        /// Corpus root written by `synth`: uses its labeled/, unlabeled/ and test_target/.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the labeled directory (images/ and masks/).
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Run directory for checkpoints, logs and the config echo.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint, using the configuration stored in it.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint on a labeled directory (images/ and masks/).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the test directory recorded in the checkpoint's configuration.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f32>,
        /// Report two-class mean IoU instead of foreground IoU.
        #[arg(long)]
        two_class_miou: bool,
        /// Report path; defaults to eval_report.json beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write probability maps and binary masks for an image or a directory of images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Train and evaluate the stage classifier on a class_<k>/images layout.
    Classify {
        #[arg(long)]
        data: PathBuf,
        /// image, mask or fusion.
        #[arg(long)]
        mode: Option<String>,
        /// Segmentation checkpoint used to generate missing vessel masks.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
