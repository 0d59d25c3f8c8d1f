//! Batch scoring of test photos through all models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{MergedModel, ProbabilityVector, SingleInputModel};
use crate::training::{load_eval_tensor, AugmentConfig, MergedItem};

/// The three trained single-input branch models.
pub struct BranchModels {
    pub image: SingleInputModel,
    pub faces: SingleInputModel,
    pub people: SingleInputModel,
}

/// Every score a test photo produces: per-branch probability vectors plus
/// the merged model's output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotoScores {
    pub photo_id: String,
    pub true_class: usize,
    pub image: ProbabilityVector,
    pub faces: Vec<ProbabilityVector>,
    pub people: Vec<ProbabilityVector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged: Option<ProbabilityVector>,
}

fn score_one(
    models: &BranchModels,
    merged: Option<&MergedModel>,
    item: &MergedItem,
    augment: &AugmentConfig,
) -> Result<PhotoScores> {
    let input_size = models.image.input_size();
    let photo = load_eval_tensor(&item.photo_path, input_size, augment)?;
    let image_scores = models.image.forward_scores(&photo)?;

    let mut face_tensors = Vec::with_capacity(item.face_paths.len());
    for p in &item.face_paths {
        face_tensors.push(load_eval_tensor(p, input_size, augment)?);
    }
    let faces = if face_tensors.is_empty() {
        Vec::new()
    } else {
        let batch = crate::imageio::stack_batch(&face_tensors)?;
        models.faces.forward_scores_batch(&batch)?
    };

    let mut people_tensors = Vec::with_capacity(item.people_paths.len());
    for p in &item.people_paths {
        people_tensors.push(load_eval_tensor(p, input_size, augment)?);
    }
    let people = if people_tensors.is_empty() {
        Vec::new()
    } else {
        let batch = crate::imageio::stack_batch(&people_tensors)?;
        models.people.forward_scores_batch(&batch)?
    };

    let merged_scores = match merged {
        Some(m) => Some(m.forward(&photo, &face_tensors, &people_tensors)?),
        None => None,
    };

    Ok(PhotoScores {
        photo_id: item.id.clone(),
        true_class: item.class_index,
        image: image_scores,
        faces,
        people,
        merged: merged_scores,
    })
}

/// Score photos through the branch models and optionally the merged model.
/// Deterministic (eval transforms only); parallel over photos.
pub fn score_photos(
    models: &BranchModels,
    merged: Option<&MergedModel>,
    items: &[MergedItem],
    augment: &AugmentConfig,
) -> Result<Vec<PhotoScores>> {
    items
        .par_iter()
        .map(|item| score_one(models, merged, item, augment))
        .collect()
}
