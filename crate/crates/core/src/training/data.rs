//! Split-tagged datasets and batch loading.
//!
//! Every dataset and batch carries the split it was drawn from; the training
//! loops refuse gradient steps on anything but a train-tagged batch, so
//! validation or test pixels can never leak into optimization.

use std::path::{Path, PathBuf};

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::{Catalog, DatingLabelMap, Split, Task};
use crate::error::{CoreError, Result};
use crate::imageio;
use crate::models::Branch;
use crate::regions::{CropIndex, RegionKind};

use super::augment::{augment, eval_transform, AugmentConfig};
use super::stream_seed;

/// One labeled training image, whole photo or crop.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub path: PathBuf,
    pub class_index: usize,
}

/// A labeled image list tagged with its split.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub split: Split,
    pub num_classes: usize,
    pub items: Vec<LabeledImage>,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A loaded batch, still carrying its provenance split.
#[derive(Debug, Clone)]
pub struct Batch {
    pub split: Split,
    pub x: Array4<f64>,
    pub labels: Vec<usize>,
}

/// One photo with all of its crops, for merged-model training.
#[derive(Debug, Clone)]
pub struct MergedItem {
    pub id: String,
    pub photo_path: PathBuf,
    pub face_paths: Vec<PathBuf>,
    pub people_paths: Vec<PathBuf>,
    pub class_index: usize,
}

#[derive(Debug, Clone)]
pub struct MergedDataset {
    pub split: Split,
    pub num_classes: usize,
    pub items: Vec<MergedItem>,
}

impl MergedDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn resolve(image_root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        image_root.join(p)
    }
}

/// Dataset for one branch of one split, drawn from a split-assigned catalog.
///
/// Face/person crops inherit the label and split of their parent photo.
pub fn single_branch_dataset(
    branch: Branch,
    catalog: &Catalog,
    crop_index: Option<&CropIndex>,
    task: Task,
    map: &DatingLabelMap,
    image_root: &Path,
    split: Split,
) -> Result<SplitDataset> {
    let num_classes = task.num_classes();
    let mut items = Vec::new();
    match branch {
        Branch::Image => {
            for r in catalog.records() {
                if r.split != split {
                    continue;
                }
                items.push(LabeledImage {
                    id: r.photo_id.clone(),
                    path: resolve(image_root, &r.image_ref),
                    class_index: Catalog::class_index(r, task, map)?,
                });
            }
        }
        Branch::Faces | Branch::People => {
            let kind = if branch == Branch::Faces { RegionKind::Face } else { RegionKind::Person };
            let index = crop_index.ok_or_else(|| {
                CoreError::Training(format!("{branch} dataset needs a crop index"))
            })?;
            for crop in index.crops_of_kind(kind) {
                let Some(parent) = catalog.get(&crop.parent_id) else {
                    // Crop of a photo outside this catalog (e.g. dating-task
                    // filtering removed the parent).
                    continue;
                };
                if parent.split != split {
                    continue;
                }
                items.push(LabeledImage {
                    id: crop.crop_id.clone(),
                    path: crop.image_ref.clone(),
                    class_index: Catalog::class_index(parent, task, map)?,
                });
            }
        }
    }
    Ok(SplitDataset { split, num_classes, items })
}

/// Per-photo dataset (photo plus its crops) for merged-model training.
pub fn merged_dataset(
    catalog: &Catalog,
    crop_index: &CropIndex,
    task: Task,
    map: &DatingLabelMap,
    image_root: &Path,
    split: Split,
) -> Result<MergedDataset> {
    let mut items = Vec::new();
    for r in catalog.records() {
        if r.split != split {
            continue;
        }
        let mut face_paths = Vec::new();
        let mut people_paths = Vec::new();
        for crop in &crop_index.crops {
            if crop.parent_id == r.photo_id {
                match crop.kind {
                    RegionKind::Face => face_paths.push(crop.image_ref.clone()),
                    RegionKind::Person => people_paths.push(crop.image_ref.clone()),
                }
            }
        }
        items.push(MergedItem {
            id: r.photo_id.clone(),
            photo_path: resolve(image_root, &r.image_ref),
            face_paths,
            people_paths,
            class_index: Catalog::class_index(r, task, map)?,
        });
    }
    Ok(MergedDataset { split, num_classes: task.num_classes(), items })
}

/// How a batch's images are transformed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Phase {
    /// Augmented; the epoch and base seed drive per-item RNG streams.
    Train { seed: u64, epoch: usize },
    /// Deterministic center crop.
    Eval,
}

/// Load one image through letterbox + phase transform into a CHW tensor.
pub(crate) fn load_image_tensor(
    path: &Path,
    input_size: u32,
    cfg: &AugmentConfig,
    phase: Phase,
    item_index: usize,
) -> Result<ndarray::Array3<f64>> {
    let img = imageio::load_rgb(path)?;
    let img = imageio::letterbox(&img, input_size);
    let img = match phase {
        Phase::Train { seed, epoch } => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, epoch, item_index));
            augment(&img, cfg, &mut rng)?
        }
        Phase::Eval => eval_transform(&img, cfg),
    };
    Ok(imageio::to_tensor(&img))
}

/// Load one image with the deterministic eval transform (letterbox plus
/// center crop). Public for evaluation and explanation code.
pub fn load_eval_tensor(
    path: &Path,
    input_size: u32,
    cfg: &AugmentConfig,
) -> Result<ndarray::Array3<f64>> {
    load_image_tensor(path, input_size, cfg, Phase::Eval, 0)
}

/// Load a batch of labeled images in parallel (order-preserving).
pub(crate) fn load_batch(
    dataset: &SplitDataset,
    indices: &[usize],
    input_size: u32,
    cfg: &AugmentConfig,
    phase: Phase,
) -> Result<Batch> {
    let tensors: Vec<ndarray::Array3<f64>> = indices
        .par_iter()
        .map(|&i| {
            let item = &dataset.items[i];
            load_image_tensor(&item.path, input_size, cfg, phase, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let x = imageio::stack_batch(&tensors)?;
    let labels = indices.iter().map(|&i| dataset.items[i].class_index).collect();
    Ok(Batch { split: dataset.split, x, labels })
}
