//! Data-preparation and training stages.

use anyhow::{bail, Context, Result};

use chronolens_core::catalog::{
    class_weights, load_manifest, make_splits, save_catalog, DatingLabelMap, Split, SplitAssignment,
};
use chronolens_core::models::{
    build_merged, build_single, load_single, save_merged, save_single, BackboneSpec, Branch,
};
use chronolens_core::regions::{
    build_region_datasets, BuildOptions, CommandDetector, DetectOptions, DetectorPort,
    SidecarDetector,
};
use chronolens_core::training::{
    merged_dataset, single_branch_dataset, train_merged, train_single, TrainConfig, TrainingLog,
};

use crate::config::{DetectorChoice, RunConfig};
use crate::rundir::{RunDir, Stage};

/// Validate the manifest and persist the catalog plus the rejection report.
/// Fails (nonzero exit) when no row is valid.
pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    let dir = run.stage_dir(Stage::Ingest);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;

    let (catalog, rejections) = load_manifest(&config.manifest)?;
    save_catalog(&catalog, &run.catalog_path())?;
    rejections.save(&run.rejections_path())?;

    println!(
        "ingested {} valid records, rejected {} (report: {})",
        catalog.len(),
        rejections.len(),
        run.rejections_path().display()
    );
    if catalog.is_empty() {
        bail!("manifest produced zero valid records");
    }
    Ok(())
}

fn make_detector(choice: &DetectorChoice) -> Box<dyn DetectorPort> {
    match choice {
        DetectorChoice::Stub => Box::new(SidecarDetector),
        DetectorChoice::Command { program } => Box::new(CommandDetector::new(program.clone())),
    }
}

/// Detect faces and people in every catalog photo and materialize crops.
pub fn cmd_detect(config: &RunConfig) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    run.require(&[Stage::Ingest], config.task)?;

    let catalog = chronolens_core::catalog::load_catalog(&run.catalog_path())?;
    let detector = make_detector(&config.detector);
    let opts = BuildOptions {
        detect: DetectOptions { confidence_floor: config.confidence_floor },
        image_root: config.image_root.clone(),
        out_dir: run.crops_dir(),
    };
    let (datasets, index) = build_region_datasets(&catalog, detector.as_ref(), &opts)?;
    index.save(&run.crop_index_path())?;

    println!(
        "detected {} face crops and {} person crops across {} photos ({} failures, {} no-region entries)",
        datasets.faces.len(),
        datasets.people.len(),
        catalog.len(),
        datasets.failures.len(),
        datasets.no_region.len()
    );
    Ok(())
}

/// Draw the train/val/test partition for the active task.
pub fn cmd_split(config: &RunConfig) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    run.require(&[Stage::Ingest], config.task)?;

    let catalog = super::task_catalog(config, &run)?;
    let assignment = make_splits(&catalog, config.seed)?;
    let dir = run.stage_dir(Stage::Split);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    assignment.save(&run.split_path(config.task))?;

    println!(
        "split {} {} records: {} train / {} val / {} test (seed {})",
        catalog.len(),
        config.task,
        assignment.count(Split::Train),
        assignment.count(Split::Val),
        assignment.count(Split::Test),
        config.seed
    );
    Ok(())
}

/// Which model(s) a train invocation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainBranch {
    Single(Branch),
    Merged,
    All,
}

impl TrainBranch {
    pub fn parse(s: &str) -> Result<TrainBranch> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" => Ok(TrainBranch::Single(Branch::Image)),
            "faces" => Ok(TrainBranch::Single(Branch::Faces)),
            "people" => Ok(TrainBranch::Single(Branch::People)),
            "merged" => Ok(TrainBranch::Merged),
            "all" => Ok(TrainBranch::All),
            other => bail!("unknown branch {other:?} (image|faces|people|merged|all)"),
        }
    }
}

fn train_config_for(config: &RunConfig, branch: Branch, weights: chronolens_core::catalog::ClassWeightVector) -> TrainConfig {
    TrainConfig {
        learning_rate: config.train.learning_rate,
        weight_decay: config.train.weight_decay,
        batch_size: match branch {
            Branch::Image => config.train.batch_size_image,
            _ => config.train.batch_size_crops,
        },
        epochs: config.train.epochs,
        early_stop_patience: config.train.early_stop_patience,
        augment: config.train.augment,
        seed: config.seed,
        class_weights: weights,
    }
}

fn train_one_single(config: &RunConfig, run: &RunDir, branch: Branch) -> Result<()> {
    let catalog = super::task_catalog(config, run)?;
    let assignment = SplitAssignment::load(&run.split_path(config.task))?;
    let catalog = catalog.with_split(&assignment)?;
    let index = chronolens_core::regions::CropIndex::load(&run.crop_index_path())?;
    let map = DatingLabelMap::default();

    let train_set = single_branch_dataset(
        branch, &catalog, Some(&index), config.task, &map, &config.image_root, Split::Train,
    )?;
    let val_set = single_branch_dataset(
        branch, &catalog, Some(&index), config.task, &map, &config.image_root, Split::Val,
    )?;

    // Class weights come from the train split only.
    let train_ids: Vec<_> = catalog
        .records()
        .iter()
        .filter(|r| r.split == Split::Train)
        .cloned()
        .collect();
    let train_catalog = chronolens_core::catalog::Catalog::new(train_ids)?;
    let weights = class_weights(&train_catalog, config.task, &map)?;

    let spec = BackboneSpec::new(config.backbone, false);
    let model_seed = config.seed.wrapping_add(match branch {
        Branch::Image => 1,
        Branch::Faces => 2,
        Branch::People => 3,
    });
    let mut model = build_single(spec, config.task, branch, model_seed, None)?;
    let tc = train_config_for(config, branch, weights);
    let report = train_single(&mut model, &train_set, &val_set, &tc)?;

    let dir = run.model_dir(config.task, branch.as_str());
    save_single(&model, &dir, Some(serde_json::to_value(&tc)?))?;
    TrainingLog::save_all(&dir.join("train_log.jsonl"), &report.log)?;
    println!(
        "trained {} branch ({} train / {} val): best val accuracy {:.4} at epoch {}{}",
        branch,
        train_set.len(),
        val_set.len(),
        report.best_val_accuracy,
        report.best_epoch,
        if report.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

fn train_merged_model(config: &RunConfig, run: &RunDir) -> Result<()> {
    for branch in Branch::ALL {
        let marker = run.model_dir(config.task, branch.as_str()).join("model.json");
        if !marker.exists() {
            bail!(
                "merged training needs the trained {} branch: run `chronolens train --branch {}` first",
                branch,
                branch
            );
        }
    }
    let image = load_single(&run.model_dir(config.task, "image"))?;
    let faces = load_single(&run.model_dir(config.task, "faces"))?;
    let people = load_single(&run.model_dir(config.task, "people"))?;

    let catalog = super::task_catalog(config, run)?;
    let assignment = SplitAssignment::load(&run.split_path(config.task))?;
    let catalog = catalog.with_split(&assignment)?;
    let index = chronolens_core::regions::CropIndex::load(&run.crop_index_path())?;
    let map = DatingLabelMap::default();

    let train_set = merged_dataset(&catalog, &index, config.task, &map, &config.image_root, Split::Train)?;
    let val_set = merged_dataset(&catalog, &index, config.task, &map, &config.image_root, Split::Val)?;

    let train_ids: Vec<_> = catalog
        .records()
        .iter()
        .filter(|r| r.split == Split::Train)
        .cloned()
        .collect();
    let train_catalog = chronolens_core::catalog::Catalog::new(train_ids)?;
    let weights = class_weights(&train_catalog, config.task, &map)?;

    let mut merged = build_merged(&image, &faces, &people, config.task, config.seed.wrapping_add(4))?;
    merged.freeze_backbones = config.train.freeze_backbones;
    let tc = train_config_for(config, Branch::Image, weights);
    let report = train_merged(&mut merged, &train_set, &val_set, &tc)?;

    let dir = run.model_dir(config.task, "merged");
    save_merged(&merged, &dir, Some(serde_json::to_value(&tc)?))?;
    TrainingLog::save_all(&dir.join("train_log.jsonl"), &report.log)?;
    let w = merged.fusion_weights();
    println!(
        "trained merged model: best val accuracy {:.4} at epoch {} (alpha {:.4}, beta {:.4}, gamma {:.4})",
        report.best_val_accuracy, report.best_epoch, w.alpha, w.beta, w.gamma
    );
    Ok(())
}

/// Train one branch, the merged model, or everything in order.
pub fn cmd_train(config: &RunConfig, branch: TrainBranch) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    run.require(&[Stage::Ingest, Stage::Split, Stage::Detect], config.task)?;

    match branch {
        TrainBranch::Single(b) => train_one_single(config, &run, b),
        TrainBranch::Merged => train_merged_model(config, &run),
        TrainBranch::All => {
            for b in Branch::ALL {
                train_one_single(config, &run, b)?;
            }
            train_merged_model(config, &run)
        }
    }
}
