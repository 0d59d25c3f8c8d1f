//! Training loop for the merged model.
//!
//! Under the default freeze policy only the fusion scalars and the new head
//! receive updates; branch backbones stay as their single-input training
//! left them. Unfreezing is an explicit toggle on the model.

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::Split;
use crate::error::{CoreError, Result};
use crate::imageio;
use crate::models::MergedModel;
use crate::nn::{weighted_cross_entropy, Adam, Backbone};

use super::data::{load_image_tensor, MergedDataset, Phase};
use super::log::EpochRecord;
use super::single_loop::{restore, snapshot};
use super::{TrainConfig, TrainReport};

struct MergedBatch {
    split: Split,
    photos: Array4<f64>,
    labels: Vec<usize>,
    faces: Option<Array4<f64>>,
    face_segments: Vec<(usize, usize)>,
    people: Option<Array4<f64>>,
    people_segments: Vec<(usize, usize)>,
}

/// Spread per-item RNG streams so the photo and every crop of a sample get
/// distinct, stable augmentation draws.
const STREAM_STRIDE: usize = 257;

fn load_merged_batch(
    dataset: &MergedDataset,
    indices: &[usize],
    input_size: u32,
    cfg: &super::AugmentConfig,
    phase: Phase,
) -> Result<MergedBatch> {
    struct ItemTensors {
        photo: ndarray::Array3<f64>,
        faces: Vec<ndarray::Array3<f64>>,
        people: Vec<ndarray::Array3<f64>>,
        label: usize,
    }

    let loaded: Vec<ItemTensors> = indices
        .par_iter()
        .map(|&i| {
            let item = &dataset.items[i];
            let base = i * STREAM_STRIDE;
            let photo = load_image_tensor(&item.photo_path, input_size, cfg, phase, base)?;
            let faces = item
                .face_paths
                .iter()
                .enumerate()
                .map(|(j, p)| load_image_tensor(p, input_size, cfg, phase, base + 1 + j))
                .collect::<Result<Vec<_>>>()?;
            let people = item
                .people_paths
                .iter()
                .enumerate()
                .map(|(j, p)| load_image_tensor(p, input_size, cfg, phase, base + 128 + j))
                .collect::<Result<Vec<_>>>()?;
            Ok(ItemTensors { photo, faces, people, label: item.class_index })
        })
        .collect::<Result<Vec<_>>>()?;

    let photos = imageio::stack_batch(&loaded.iter().map(|t| t.photo.clone()).collect::<Vec<_>>())?;
    let labels = loaded.iter().map(|t| t.label).collect();

    let mut face_tensors = Vec::new();
    let mut face_segments = Vec::with_capacity(loaded.len());
    let mut people_tensors = Vec::new();
    let mut people_segments = Vec::with_capacity(loaded.len());
    for t in &loaded {
        face_segments.push((face_tensors.len(), t.faces.len()));
        face_tensors.extend(t.faces.iter().cloned());
        people_segments.push((people_tensors.len(), t.people.len()));
        people_tensors.extend(t.people.iter().cloned());
    }
    let faces = if face_tensors.is_empty() { None } else { Some(imageio::stack_batch(&face_tensors)?) };
    let people =
        if people_tensors.is_empty() { None } else { Some(imageio::stack_batch(&people_tensors)?) };

    Ok(MergedBatch {
        split: dataset.split,
        photos,
        labels,
        faces,
        face_segments,
        people,
        people_segments,
    })
}

/// Per-sample mean over crop features; zero rows for samples without crops.
fn segment_means(
    feats: Option<&Array2<f64>>,
    segments: &[(usize, usize)],
    dim: usize,
) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((segments.len(), dim));
    if let Some(feats) = feats {
        for (i, &(start, len)) in segments.iter().enumerate() {
            if len == 0 {
                continue;
            }
            let mut row = out.row_mut(i);
            for j in start..start + len {
                row += &feats.row(j);
            }
            row /= len as f64;
        }
    }
    out
}

/// Scatter per-sample mean gradients back to per-crop rows.
fn segment_mean_backward(
    dmeans: &Array2<f64>,
    segments: &[(usize, usize)],
    total_crops: usize,
    dim: usize,
) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((total_crops, dim));
    for (i, &(start, len)) in segments.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let scaled = &dmeans.row(i) / len as f64;
        for j in start..start + len {
            out.row_mut(j).assign(&scaled);
        }
    }
    out
}

fn branch_features(
    backbone: &mut Backbone,
    batch: Option<&Array4<f64>>,
    train_backbone: bool,
) -> Option<Array2<f64>> {
    batch.map(|x| if train_backbone { backbone.forward_train(x) } else { backbone.forward(x) })
}

/// Analytic fusion-scalar gradients: `d(loss)/d(alpha) = <dfused, f_img>`
/// and likewise for the crop branches. Shared by the training step and the
/// gradient-check entry point below.
fn fusion_grads(dfused: &Array2<f64>, f_img: &Array2<f64>, f_faces: &Array2<f64>, f_people: &Array2<f64>) -> [f64; 3] {
    [(dfused * f_img).sum(), (dfused * f_faces).sum(), (dfused * f_people).sum()]
}

/// An in-memory batch for the merged model: per-sample crop tensor lists.
#[derive(Debug, Clone)]
pub struct MergedTensorBatch {
    pub photos: Array4<f64>,
    pub labels: Vec<usize>,
    pub faces: Vec<Vec<ndarray::Array3<f64>>>,
    pub people: Vec<Vec<ndarray::Array3<f64>>>,
}

/// Loss and analytic fusion-scalar gradients at the model's current
/// parameters, without mutating anything. This is the production gradient
/// path (same formulas the optimizer consumes), exposed so it can be checked
/// against finite differences.
pub fn merged_loss_and_fusion_grads(
    model: &MergedModel,
    batch: &MergedTensorBatch,
    class_weights: &[f64],
) -> Result<(f64, [f64; 3])> {
    let dim = model.feature_dim();
    let n = batch.photos.dim().0;
    if batch.labels.len() != n || batch.faces.len() != n || batch.people.len() != n {
        return Err(CoreError::Training("ragged merged tensor batch".into()));
    }
    let f_img = model.image_backbone.forward(&batch.photos);

    let flatten = |nested: &[Vec<ndarray::Array3<f64>>], backbone: &Backbone| -> Result<(Option<Array2<f64>>, Vec<(usize, usize)>)> {
        let mut tensors = Vec::new();
        let mut segments = Vec::with_capacity(nested.len());
        for crops in nested {
            segments.push((tensors.len(), crops.len()));
            tensors.extend(crops.iter().cloned());
        }
        if tensors.is_empty() {
            return Ok((None, segments));
        }
        let stacked = crate::imageio::stack_batch(&tensors)?;
        Ok((Some(backbone.forward(&stacked)), segments))
    };
    let (face_feats, face_segments) = flatten(&batch.faces, &model.faces_backbone)?;
    let (people_feats, people_segments) = flatten(&batch.people, &model.people_backbone)?;
    let f_faces = segment_means(face_feats.as_ref(), &face_segments, dim);
    let f_people = segment_means(people_feats.as_ref(), &people_segments, dim);

    let fused = model.fuse(&f_img, &f_faces, &f_people);
    let logits = model.head.forward(&fused, None);
    let out = weighted_cross_entropy(&logits, &batch.labels, class_weights)?;
    let dfused = model.head.input_gradient(&out.dlogits);
    Ok((out.loss, fusion_grads(&dfused, &f_img, &f_faces, &f_people)))
}

fn merged_step(
    model: &mut MergedModel,
    batch: &MergedBatch,
    config: &TrainConfig,
    opt: &mut Adam,
) -> Result<(f64, usize)> {
    if batch.split != Split::Train {
        return Err(CoreError::Training(format!(
            "gradient step on a {}-tagged batch; only train data may drive optimization",
            batch.split
        )));
    }
    let dim = model.feature_dim();
    let unfrozen = !model.freeze_backbones;

    let f_img = if unfrozen {
        model.image_backbone.forward_train(&batch.photos)
    } else {
        model.image_backbone.forward(&batch.photos)
    };
    let face_feats = branch_features(&mut model.faces_backbone, batch.faces.as_ref(), unfrozen);
    let people_feats = branch_features(&mut model.people_backbone, batch.people.as_ref(), unfrozen);
    let f_faces = segment_means(face_feats.as_ref(), &batch.face_segments, dim);
    let f_people = segment_means(people_feats.as_ref(), &batch.people_segments, dim);

    let fused = model.fuse(&f_img, &f_faces, &f_people);
    let mut head_cache = None;
    let logits = model.head.forward(&fused, Some(&mut head_cache));
    let out = weighted_cross_entropy(&logits, &batch.labels, config.class_weights.as_slice())?;
    let dfused = model.head.backward(head_cache.as_ref().expect("cache filled"), &out.dlogits);

    let [da, db, dg] = fusion_grads(&dfused, &f_img, &f_faces, &f_people);
    model.fusion.grad[[0]] += da;
    model.fusion.grad[[1]] += db;
    model.fusion.grad[[2]] += dg;

    if unfrozen {
        let w = model.fusion_weights();
        let _ = model.image_backbone.backward(&(&dfused * w.alpha));
        if let Some(faces) = batch.faces.as_ref() {
            let total = faces.dim().0;
            let dcrops = segment_mean_backward(&(&dfused * w.beta), &batch.face_segments, total, dim);
            let _ = model.faces_backbone.backward(&dcrops);
        }
        if let Some(people) = batch.people.as_ref() {
            let total = people.dim().0;
            let dcrops = segment_mean_backward(&(&dfused * w.gamma), &batch.people_segments, total, dim);
            let _ = model.people_backbone.backward(&dcrops);
        }
    }

    opt.step(model.trainable_params_mut());
    Ok((out.loss, out.correct))
}

fn merged_eval(model: &MergedModel, batch: &MergedBatch, config: &TrainConfig) -> Result<(f64, usize)> {
    let dim = model.feature_dim();
    let f_img = model.image_backbone.forward(&batch.photos);
    let face_feats = batch.faces.as_ref().map(|x| model.faces_backbone.forward(x));
    let people_feats = batch.people.as_ref().map(|x| model.people_backbone.forward(x));
    let f_faces = segment_means(face_feats.as_ref(), &batch.face_segments, dim);
    let f_people = segment_means(people_feats.as_ref(), &batch.people_segments, dim);
    let fused = model.fuse(&f_img, &f_faces, &f_people);
    let logits = model.head.forward(&fused, None);
    let out = weighted_cross_entropy(&logits, &batch.labels, config.class_weights.as_slice())?;
    Ok((out.loss, out.correct))
}

/// Precomputed per-item branch features for the frozen, unaugmented case:
/// the inputs never change across epochs, so backbone forwards happen once.
struct CachedFeatures {
    f_img: Array2<f64>,
    f_faces: Array2<f64>,
    f_people: Array2<f64>,
    labels: Vec<usize>,
}

fn extract_features(
    model: &MergedModel,
    dataset: &MergedDataset,
    config: &TrainConfig,
    input_size: u32,
) -> Result<CachedFeatures> {
    let dim = model.feature_dim();
    let mut f_img = Array2::<f64>::zeros((dataset.len(), dim));
    let mut f_faces = Array2::<f64>::zeros((dataset.len(), dim));
    let mut f_people = Array2::<f64>::zeros((dataset.len(), dim));
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(config.batch_size.max(1)) {
        let batch = load_merged_batch(dataset, chunk, input_size, &config.augment, Phase::Eval)?;
        let img = model.image_backbone.forward(&batch.photos);
        let faces = batch.faces.as_ref().map(|x| model.faces_backbone.forward(x));
        let people = batch.people.as_ref().map(|x| model.people_backbone.forward(x));
        let faces = segment_means(faces.as_ref(), &batch.face_segments, dim);
        let people = segment_means(people.as_ref(), &batch.people_segments, dim);
        for (row, &item) in chunk.iter().enumerate() {
            f_img.row_mut(item).assign(&img.row(row));
            f_faces.row_mut(item).assign(&faces.row(row));
            f_people.row_mut(item).assign(&people.row(row));
        }
    }
    let labels = dataset.items.iter().map(|i| i.class_index).collect();
    Ok(CachedFeatures { f_img, f_faces, f_people, labels })
}

fn gather(rows: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((indices.len(), rows.dim().1));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&rows.row(i));
    }
    out
}

/// One fusion+head step over cached features.
fn cached_step(
    model: &mut MergedModel,
    features: &CachedFeatures,
    indices: &[usize],
    config: &TrainConfig,
    opt: &mut Adam,
) -> Result<(f64, usize)> {
    let f_img = gather(&features.f_img, indices);
    let f_faces = gather(&features.f_faces, indices);
    let f_people = gather(&features.f_people, indices);
    let labels: Vec<usize> = indices.iter().map(|&i| features.labels[i]).collect();

    let fused = model.fuse(&f_img, &f_faces, &f_people);
    let mut head_cache = None;
    let logits = model.head.forward(&fused, Some(&mut head_cache));
    let out = weighted_cross_entropy(&logits, &labels, config.class_weights.as_slice())?;
    let dfused = model.head.backward(head_cache.as_ref().expect("cache filled"), &out.dlogits);
    let [da, db, dg] = fusion_grads(&dfused, &f_img, &f_faces, &f_people);
    model.fusion.grad[[0]] += da;
    model.fusion.grad[[1]] += db;
    model.fusion.grad[[2]] += dg;
    opt.step(model.trainable_params_mut());
    Ok((out.loss, out.correct))
}

fn cached_eval(
    model: &MergedModel,
    features: &CachedFeatures,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    if features.labels.is_empty() {
        return Ok((f64::NAN, 0.0));
    }
    let fused = model.fuse(&features.f_img, &features.f_faces, &features.f_people);
    let logits = model.head.forward(&fused, None);
    let out = weighted_cross_entropy(&logits, &features.labels, config.class_weights.as_slice())?;
    Ok((out.loss, out.correct as f64 / features.labels.len() as f64))
}

/// Train the merged model's fusion scalars and head (plus backbones when
/// unfrozen). Checkpoints on validation accuracy like the single loop, and
/// logs the fusion trajectory per epoch.
///
/// When the backbones are frozen and augmentation is off, every branch
/// feature is a constant of the item, so they are extracted once and the
/// epochs run over cached features; the epoch cost then drops from a full
/// three-backbone forward to a head-sized matrix product.
pub fn train_merged(
    model: &mut MergedModel,
    train: &MergedDataset,
    val: &MergedDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.split != Split::Train {
        return Err(CoreError::Training(format!("training dataset is tagged {}", train.split)));
    }
    if val.split != Split::Val {
        return Err(CoreError::Training(format!("validation dataset is tagged {}", val.split)));
    }
    if train.is_empty() {
        return Err(CoreError::Training("empty train split".into()));
    }
    if config.class_weights.len() != model.head.out_dim {
        return Err(CoreError::Training(format!(
            "{} class weights for a {}-class head",
            config.class_weights.len(),
            model.head.out_dim
        )));
    }

    let input_size = model.input_size();
    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Vec<ndarray::ArrayD<f64>>)> = None;
    let mut stopped_early = false;

    let deterministic_inputs =
        model.freeze_backbones && !config.augment.random_crop && !config.augment.horizontal_flip;
    let cached = if deterministic_inputs {
        Some((
            extract_features(model, train, config, input_size)?,
            extract_features(model, val, config, input_size)?,
        ))
    } else {
        None
    };

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (loss, correct) = match &cached {
                Some((train_feats, _)) => cached_step(model, train_feats, chunk, config, &mut opt),
                None => {
                    let batch = load_merged_batch(train, chunk, input_size, &config.augment, Phase::Train {
                        seed: config.seed,
                        epoch,
                    })?;
                    merged_step(model, &batch, config, &mut opt)
                }
            }
            .map_err(|e| CoreError::Training(format!("epoch {epoch}: {e}")))?;
            epoch_loss += loss * chunk.len() as f64;
            epoch_correct += correct;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let train_accuracy = epoch_correct as f64 / train.len() as f64;

        let (val_loss, val_accuracy) = match &cached {
            Some((_, val_feats)) => cached_eval(model, val_feats, config)?,
            None => {
                let (mut val_loss, mut val_correct) = (0.0, 0usize);
                if !val.is_empty() {
                    let indices: Vec<usize> = (0..val.len()).collect();
                    for chunk in indices.chunks(config.batch_size.max(1)) {
                        let batch =
                            load_merged_batch(val, chunk, input_size, &config.augment, Phase::Eval)?;
                        let (loss, correct) = merged_eval(model, &batch, config)?;
                        val_loss += loss * chunk.len() as f64;
                        val_correct += correct;
                    }
                }
                if val.is_empty() {
                    (f64::NAN, 0.0)
                } else {
                    (val_loss / val.len() as f64, val_correct as f64 / val.len() as f64)
                }
            }
        };

        let w = model.fusion_weights();
        log.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            alpha: Some(w.alpha),
            beta: Some(w.beta),
            gamma: Some(w.gamma),
        });

        let improved = best.as_ref().map_or(true, |(_, acc, _)| val_accuracy > *acc);
        if improved {
            best = Some((epoch, val_accuracy, snapshot(&model_params(model))));
        } else if let (Some(patience), Some((best_epoch, _, _))) =
            (config.early_stop_patience, best.as_ref())
        {
            if epoch - best_epoch >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_val_accuracy, snap) = best.expect("at least one epoch ran");
    restore(model_params_mut(model), &snap);
    Ok(TrainReport { log, best_epoch, best_val_accuracy, stopped_early })
}

fn model_params(model: &MergedModel) -> Vec<&crate::nn::Param> {
    let mut p = Vec::new();
    p.push(&model.fusion);
    p.extend(model.head.params());
    p.extend(model.image_backbone.params());
    p.extend(model.faces_backbone.params());
    p.extend(model.people_backbone.params());
    p
}

fn model_params_mut(model: &mut MergedModel) -> Vec<&mut crate::nn::Param> {
    let mut p: Vec<&mut crate::nn::Param> = Vec::new();
    p.push(&mut model.fusion);
    p.extend(model.head.params_mut());
    p.extend(model.image_backbone.params_mut());
    p.extend(model.faces_backbone.params_mut());
    p.extend(model.people_backbone.params_mut());
    p
}
