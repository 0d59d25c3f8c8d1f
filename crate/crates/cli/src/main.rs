//! Command-line pipeline for dating family-album photos and classifying
//! their socio-historical context.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use chronolens_cli::commands;
use chronolens_cli::config::{self, parse_task, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "chronolens",
    about = "Date analog family-album photos and classify their socio-historical context",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Run configuration file (JSON). Flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory holding all stage artifacts.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Task: dating (1930-1999, 70 classes) or context (9 classes).
    #[arg(long, global = true)]
    task: Option<String>,

    /// Seed for splits, initialization and augmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Root directory for relative image paths in the manifest.
    #[arg(long, global = true, env = "CHRONOLENS_IMAGE_ROOT")]
    image_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic dataset (images, detections, manifest).
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1200)]
        photos: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 48)]
        image_size: u32,
        /// Up to this many faces and people per photo.
        #[arg(long, default_value_t = 2)]
        max_regions: u32,
        /// Draw exactly this many faces and people in every photo.
        #[arg(long)]
        fixed_regions: Option<u32>,
    },
    /// Validate the manifest into a catalog plus a rejection report.
    Ingest {
        #[command(flatten)]
        common: CommonOpts,
        /// Manifest CSV (photo_id,image_path,year,context,description,city,nation).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Detect faces and people, materialize adaptive crops.
    Detect {
        #[command(flatten)]
        common: CommonOpts,
        /// Detector: "stub" (sidecar files) or "command:<program>".
        #[arg(long)]
        detector: Option<String>,
    },
    /// Draw the train/val/test partition for the active task.
    Split {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train branch classifiers and the merged model.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// image | faces | people | merged | all
        #[arg(long, default_value = "all")]
        branch: String,
        /// Override the configured epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score the test split and write per-model metric reports.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Fixed-count face/people ablation on the test split.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        /// Require exactly this many faces/people per photo.
        #[arg(long)]
        n: Option<u32>,
    },
    /// Class-activation overlays for sample photos.
    Explain {
        #[command(flatten)]
        common: CommonOpts,
        /// Explain these photo ids (defaults to a test-split sample).
        #[arg(long = "photo-id")]
        photo_ids: Vec<String>,
    },
    /// Assemble the final document: tables, plots, ablation.
    Report {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn resolve_config(common: &CommonOpts, manifest: Option<&PathBuf>) -> Result<RunConfig> {
    let overrides = Overrides {
        task: common.task.as_deref().map(parse_task).transpose()?,
        seed: common.seed,
        run_dir: common.run_dir.clone(),
        image_root: common.image_root.clone(),
        manifest: manifest.cloned(),
    };
    let config = match &common.config {
        Some(path) => RunConfig::load(path)?.apply(&overrides),
        None => {
            // Minimal config from flags alone.
            let Some(run_dir) = overrides.run_dir.clone() else {
                bail!("either --config or --run-dir is required");
            };
            let manifest = overrides.manifest.clone().unwrap_or_default();
            let image_root = overrides
                .image_root
                .clone()
                .or_else(|| manifest.parent().map(|p| p.to_path_buf()))
                .unwrap_or_else(|| PathBuf::from("."));
            RunConfig {
                task: overrides.task.unwrap_or(chronolens_core::catalog::Task::Dating),
                manifest,
                image_root,
                run_dir,
                seed: overrides.seed.unwrap_or(0),
                detector: Default::default(),
                confidence_floor: 0.25,
                backbone: chronolens_core::nn::BackboneFamily::Resnet50Class,
                train: Default::default(),
                evaluation: Default::default(),
                explain: Default::default(),
            }
        }
    };
    config.validate()?;
    Ok(config)
}

fn parse_detector(s: &str) -> Result<config::DetectorChoice> {
    if s == "stub" {
        Ok(config::DetectorChoice::Stub)
    } else if let Some(program) = s.strip_prefix("command:") {
        Ok(config::DetectorChoice::Command { program: PathBuf::from(program) })
    } else {
        bail!("unknown detector {s:?} (expected \"stub\" or \"command:<program>\")")
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { out, photos, seed, image_size, max_regions, fixed_regions } => {
            commands::cmd_synth(&out, photos, seed, image_size, max_regions, fixed_regions)
        }
        Command::Ingest { common, manifest } => {
            let config = resolve_config(&common, manifest.as_ref())?;
            if config.manifest.as_os_str().is_empty() {
                bail!("ingest needs a manifest (--manifest or config file)");
            }
            commands::cmd_ingest(&config)
        }
        Command::Detect { common, detector } => {
            let mut config = resolve_config(&common, None)?;
            if let Some(d) = detector {
                config.detector = parse_detector(&d)?;
            }
            commands::cmd_detect(&config)
        }
        Command::Split { common } => {
            let config = resolve_config(&common, None)?;
            commands::cmd_split(&config)
        }
        Command::Train { common, branch, epochs } => {
            let mut config = resolve_config(&common, None)?;
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            let branch = commands::TrainBranch::parse(&branch)?;
            commands::cmd_train(&config, branch)
        }
        Command::Evaluate { common } => {
            let config = resolve_config(&common, None)?;
            commands::cmd_evaluate(&config)
        }
        Command::Ablate { common, n } => {
            let config = resolve_config(&common, None)?;
            commands::cmd_ablate(&config, n)
        }
        Command::Explain { common, photo_ids } => {
            let config = resolve_config(&common, None)?;
            commands::cmd_explain(&config, &photo_ids)
        }
        Command::Report { common } => {
            let config = resolve_config(&common, None)?;
            commands::cmd_report(&config)
        }
    }
}
