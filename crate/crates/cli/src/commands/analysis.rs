//! Evaluation, ablation, explanation and report assembly.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use chronolens_core::catalog::{DatingLabelMap, Split, SplitAssignment, Task};
use chronolens_core::evaluation::{
    ablation_curves_svg, confusion_heatmap_svg, context_report, dating_report, decade_curve_svg,
    kofn_ablation, render_markdown, score_photos, select_fixed_n, AblationPhoto, AblationTable,
    BranchModels, EvaluationReport, PhotoScores,
};
use chronolens_core::explain::{gradcam, overlay, ExplainRecord};
use chronolens_core::imageio;
use chronolens_core::models::{
    aggregate_probabilities, ensemble_predict, load_merged, load_single, BranchFlags,
    ProbabilityVector, SingleInputModel,
};
use chronolens_core::regions::CropIndex;
use chronolens_core::training::{eval_transform, merged_dataset, MergedItem};

use crate::config::{ExplainTarget, RunConfig};
use crate::rundir::{RunDir, Stage};

fn load_test_items(config: &RunConfig, run: &RunDir) -> Result<Vec<MergedItem>> {
    let catalog = super::task_catalog(config, run)?;
    let assignment = SplitAssignment::load(&run.split_path(config.task))?;
    let catalog = catalog.with_split(&assignment)?;
    let index = CropIndex::load(&run.crop_index_path())?;
    let map = DatingLabelMap::default();
    let ds = merged_dataset(&catalog, &index, config.task, &map, &config.image_root, Split::Test)?;
    Ok(ds.items)
}

fn load_models(config: &RunConfig, run: &RunDir) -> Result<(BranchModels, Option<chronolens_core::models::MergedModel>)> {
    let models = BranchModels {
        image: load_single(&run.model_dir(config.task, "image"))?,
        faces: load_single(&run.model_dir(config.task, "faces"))?,
        people: load_single(&run.model_dir(config.task, "people"))?,
    };
    let merged_dir = run.model_dir(config.task, "merged");
    let merged = if merged_dir.join("model.json").exists() {
        Some(load_merged(&merged_dir)?)
    } else {
        None
    };
    Ok((models, merged))
}

/// Per-model probability vector for one photo, or None when the model has no
/// data for it (e.g. the faces model on a photo without face crops).
fn model_vector(scores: &PhotoScores, model_id: &str) -> Result<Option<ProbabilityVector>> {
    Ok(match model_id {
        "image" => Some(scores.image.clone()),
        "faces" => {
            if scores.faces.is_empty() {
                None
            } else {
                Some(aggregate_probabilities(&scores.faces)?)
            }
        }
        "people" => {
            if scores.people.is_empty() {
                None
            } else {
                Some(aggregate_probabilities(&scores.people)?)
            }
        }
        "ensemble" => Some(ensemble_predict(
            Some(&scores.image),
            &scores.faces,
            &scores.people,
            BranchFlags::ALL,
        )?),
        "merged" => scores.merged.clone(),
        other => bail!("unknown model id {other}"),
    })
}

const MODEL_IDS: [&str; 5] = ["image", "faces", "people", "ensemble", "merged"];

fn build_reports(
    config: &RunConfig,
    all_scores: &[PhotoScores],
) -> Result<Vec<EvaluationReport>> {
    let map = DatingLabelMap::default();
    let mut reports = Vec::new();
    for model_id in MODEL_IDS {
        let mut vectors = Vec::new();
        let mut truths = Vec::new();
        for s in all_scores {
            if let Some(v) = model_vector(s, model_id)? {
                vectors.push(v);
                truths.push(s.true_class);
            }
        }
        if vectors.is_empty() {
            continue;
        }
        let report = match config.task {
            Task::Dating => {
                let pred_years: Vec<i32> = vectors
                    .iter()
                    .map(|v| map.year_of(v.argmax()).expect("argmax within dating classes"))
                    .collect();
                let true_years: Vec<i32> = truths
                    .iter()
                    .map(|&c| map.year_of(c).expect("truth within dating classes"))
                    .collect();
                dating_report(
                    model_id,
                    &pred_years,
                    &true_years,
                    &map,
                    &config.evaluation.time_distances,
                    None,
                )?
            }
            Task::Context => context_report(
                model_id,
                &vectors,
                &truths,
                &config.evaluation.top_ks,
                Task::Context.num_classes(),
            )?,
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Score the test split through every trained model and write per-model
/// evaluation reports.
pub fn cmd_evaluate(config: &RunConfig) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    run.require(&[Stage::Ingest, Stage::Split, Stage::Detect, Stage::Train], config.task)?;

    let items = load_test_items(config, &run)?;
    if items.is_empty() {
        bail!("test split is empty");
    }
    let (models, merged) = load_models(config, &run)?;
    let scores = score_photos(&models, merged.as_ref(), &items, &config.train.augment)?;

    let dir = run.task_dir(Stage::Evaluate, config.task);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let scores_json = serde_json::to_string(&scores)?;
    std::fs::write(run.scores_path(config.task), scores_json)?;

    let reports = build_reports(config, &scores)?;
    for report in &reports {
        report.save(&run.report_path(config.task, &report.model_id))?;
        match config.task {
            Task::Dating => println!(
                "{:>9}: d=0 {:.4}  d=5 {:.4}  d=10 {:.4}  (n={})",
                report.model_id,
                report.accuracy_at.get(&0).copied().unwrap_or(f64::NAN),
                report.accuracy_at.get(&5).copied().unwrap_or(f64::NAN),
                report.accuracy_at.get(&10).copied().unwrap_or(f64::NAN),
                report.test_size
            ),
            Task::Context => println!(
                "{:>9}: top-1 {:.4}  top-3 {:.4}  (n={})",
                report.model_id,
                report.topk.get(&1).copied().unwrap_or(f64::NAN),
                report.topk.get(&3).copied().unwrap_or(f64::NAN),
                report.test_size
            ),
        }
    }
    Ok(())
}

/// Fixed-count crop ablation over the test split.
pub fn cmd_ablate(config: &RunConfig, n_override: Option<u32>) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    run.require(&[Stage::Evaluate], config.task)?;

    let n = n_override.unwrap_or(config.evaluation.ablation_n);
    let text = std::fs::read_to_string(run.scores_path(config.task))?;
    let scores: Vec<PhotoScores> = serde_json::from_str(&text)?;
    let by_id: BTreeMap<&str, &PhotoScores> =
        scores.iter().map(|s| (s.photo_id.as_str(), s)).collect();

    let index = CropIndex::load(&run.crop_index_path())?;
    let selected = select_fixed_n(
        &index.counts,
        |id| by_id.contains_key(id),
        n,
        config.evaluation.ablation_mode,
    );
    if selected.is_empty() {
        bail!(
            "no test photo has exactly {n} faces/people ({:?} selection): nothing to ablate",
            config.evaluation.ablation_mode
        );
    }

    let photos: Vec<AblationPhoto> = selected
        .iter()
        .map(|id| {
            let s = by_id[id.as_str()];
            AblationPhoto {
                photo_id: s.photo_id.clone(),
                true_class: s.true_class,
                image: s.image.clone(),
                faces: s.faces.clone(),
                people: s.people.clone(),
            }
        })
        .collect();
    let table = kofn_ablation(&photos, n as usize)?;

    let dir = run.task_dir(Stage::Ablate, config.task);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    std::fs::write(run.ablation_path(config.task), serde_json::to_string_pretty(&table)?)?;

    println!("ablation over {} photos with exactly {n} faces/people:", selected.len());
    println!("  k | faces-only faces+img people-only people+img both-only both+img");
    for row in &table.rows {
        println!(
            "{:>3} |    {:.4}    {:.4}     {:.4}    {:.4}   {:.4}   {:.4}",
            row.k, row.cells[0], row.cells[1], row.cells[2], row.cells[3], row.cells[4], row.cells[5]
        );
    }
    Ok(())
}

/// Render class-activation overlays for sample photos.
pub fn cmd_explain(config: &RunConfig, photo_ids: &[String]) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    run.require(&[Stage::Ingest, Stage::Split, Stage::Detect, Stage::Train], config.task)?;

    let items = load_test_items(config, &run)?;
    let selected: Vec<&MergedItem> = if photo_ids.is_empty() {
        items.iter().take(config.explain.sample).collect()
    } else {
        let wanted: std::collections::HashSet<&str> = photo_ids.iter().map(|s| s.as_str()).collect();
        let found: Vec<&MergedItem> = items.iter().filter(|i| wanted.contains(i.id.as_str())).collect();
        if found.len() != wanted.len() {
            bail!("some requested photo ids are not in the test split");
        }
        found
    };
    if selected.is_empty() {
        bail!("no photos to explain");
    }

    let (models, _) = load_models(config, &run)?;
    let dir = run.task_dir(Stage::Explain, config.task);
    let overlays = dir.join("overlays");
    std::fs::create_dir_all(&overlays).with_context(|| format!("cannot create {}", overlays.display()))?;

    let mut records = String::new();
    let mut count = 0usize;
    for item in &selected {
        let mut jobs: Vec<(&SingleInputModel, &Path, String)> =
            vec![(&models.image, item.photo_path.as_path(), format!("{}_image", item.id))];
        for (ci, crop) in item.face_paths.iter().enumerate() {
            jobs.push((&models.faces, crop.as_path(), format!("{}_face{}", item.id, ci)));
        }
        for (ci, crop) in item.people_paths.iter().enumerate() {
            jobs.push((&models.people, crop.as_path(), format!("{}_person{}", item.id, ci)));
        }
        for (model, path, stem) in jobs {
            let img = imageio::load_rgb(path)?;
            let img = imageio::letterbox(&img, model.input_size());
            let img = eval_transform(&img, &config.train.augment);
            let tensor = imageio::to_tensor(&img);
            let probs = model.forward_scores(&tensor)?;
            let predicted = probs.argmax();
            let target = match config.explain.target {
                ExplainTarget::Predicted => predicted,
                ExplainTarget::Truth => item.class_index,
            };
            let map = gradcam(model, &tensor, target)?;
            let blended = overlay(&map, &img, config.explain.opacity)?;
            let out_path = overlays.join(format!("{stem}.png"));
            imageio::save_png(&blended, &out_path)?;
            let record = ExplainRecord {
                photo_id: item.id.clone(),
                branch: model.branch,
                target_class: target,
                predicted_class: predicted,
                probabilities: probs.values().to_vec(),
                degenerate: map.degenerate,
                overlay_path: out_path.display().to_string(),
            };
            records.push_str(&serde_json::to_string(&record)?);
            records.push('\n');
            count += 1;
        }
    }
    std::fs::write(dir.join("records.jsonl"), records)?;
    println!("wrote {count} overlays for {} photos under {}", selected.len(), overlays.display());
    Ok(())
}

/// Assemble the evaluation document: metric tables, plots and the ablation.
pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let run = RunDir::new(&config.run_dir);
    let _lock = run.lock()?;
    config.persist()?;
    run.require(&[Stage::Evaluate], config.task)?;

    let mut reports = Vec::new();
    for model_id in MODEL_IDS {
        let path = run.report_path(config.task, model_id);
        if path.exists() {
            reports.push(EvaluationReport::load(&path)?);
        }
    }
    if reports.is_empty() {
        bail!("no evaluation reports found; run `chronolens evaluate` first");
    }

    let ablation: Option<AblationTable> = {
        let path = run.ablation_path(config.task);
        if path.exists() {
            Some(serde_json::from_str(&std::fs::read_to_string(&path)?)?)
        } else {
            None
        }
    };

    let dir = run.task_dir(Stage::Report, config.task);
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).with_context(|| format!("cannot create {}", plots.display()))?;

    let mut md = String::new();
    md.push_str(&format!("# Evaluation report: {} task\n\n", config.task));
    md.push_str(&format!(
        "Run seed {}; backbone family {}; {} models evaluated.\n\n",
        config.seed,
        config.backbone,
        reports.len()
    ));
    if let Some(table) = &ablation {
        // Attach to the final document through the markdown renderer below.
        md.push_str(&format!(
            "Fixed-count ablation included (n = {}, {} qualifying photos for the both-branches columns).\n\n",
            table.n, table.photos_per_variant[5]
        ));
    }

    let mut with_ablation: Vec<EvaluationReport> = reports.clone();
    if let Some(table) = ablation.clone() {
        if let Some(ensemble) = with_ablation.iter_mut().find(|r| r.model_id == "ensemble") {
            ensemble.ablation = Some(table);
        }
    }
    let refs: Vec<&EvaluationReport> = with_ablation.iter().collect();
    md.push_str(&render_markdown(&refs));

    md.push_str("## Plots\n\n");
    for report in &reports {
        let confusion_path = plots.join(format!("confusion_{}.svg", report.model_id));
        confusion_heatmap_svg(
            &report.confusion,
            &format!("{} ({} task)", report.model_id, report.task),
            &confusion_path,
        )?;
        md.push_str(&format!(
            "- confusion matrix, {}: plots/confusion_{}.svg\n",
            report.model_id, report.model_id
        ));
        if !report.per_decade.is_empty() {
            let decade_path = plots.join(format!("decades_{}.svg", report.model_id));
            decade_curve_svg(
                &report.per_decade,
                &format!("accuracy and samples by decade ({})", report.model_id),
                &decade_path,
            )?;
            md.push_str(&format!(
                "- per-decade accuracy, {}: plots/decades_{}.svg\n",
                report.model_id, report.model_id
            ));
        }
    }
    if let Some(table) = &ablation {
        let path = plots.join("ablation.svg");
        ablation_curves_svg(table, "accuracy vs crops considered", &path)?;
        md.push_str("- fixed-count ablation: plots/ablation.svg\n");
    }

    std::fs::write(dir.join("report.md"), md)?;
    println!("report written to {}", dir.join("report.md").display());
    Ok(())
}
