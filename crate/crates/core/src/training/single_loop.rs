//! Fine-tuning loop for single-input models.

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::Split;
use crate::error::{CoreError, Result};
use crate::models::SingleInputModel;
use crate::nn::{weighted_cross_entropy, Adam, Param};

use super::data::{load_batch, Batch, Phase, SplitDataset};
use super::log::EpochRecord;
use super::{TrainConfig, TrainReport};

pub(crate) fn snapshot(params: &[&Param]) -> Vec<ArrayD<f64>> {
    params.iter().map(|p| p.value.clone()).collect()
}

pub(crate) fn restore(params: Vec<&mut Param>, snap: &[ArrayD<f64>]) {
    for (p, s) in params.into_iter().zip(snap) {
        p.value.assign(s);
    }
}

/// One gradient step. Refuses anything but a train-tagged batch: this is the
/// enforcement point that keeps validation and test pixels out of training.
fn gradient_step(
    model: &mut SingleInputModel,
    batch: &Batch,
    config: &TrainConfig,
    opt: &mut Adam,
) -> Result<(f64, usize)> {
    if batch.split != Split::Train {
        return Err(CoreError::Training(format!(
            "gradient step on a {}-tagged batch; only train data may drive optimization",
            batch.split
        )));
    }
    let mut head_cache = None;
    let logits = model.forward_train(&batch.x, &mut head_cache)?;
    let out = weighted_cross_entropy(&logits, &batch.labels, config.class_weights.as_slice())
        .map_err(|e| CoreError::Training(format!("loss failed: {e}")))?;
    model.backward(head_cache.as_ref().expect("cache filled"), &out.dlogits);
    opt.step(model.params_mut());
    Ok((out.loss, out.correct))
}

fn eval_pass(model: &SingleInputModel, dataset: &SplitDataset, config: &TrainConfig) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Ok((f64::NAN, 0.0));
    }
    let input_size = model.input_size();
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(config.batch_size.max(1)) {
        let batch = load_batch(dataset, chunk, input_size, &config.augment, Phase::Eval)?;
        let logits = model.forward_logits(&batch.x)?;
        let out = weighted_cross_entropy(&logits, &batch.labels, config.class_weights.as_slice())?;
        total_loss += out.loss * chunk.len() as f64;
        correct += out.correct;
    }
    Ok((total_loss / dataset.len() as f64, correct as f64 / dataset.len() as f64))
}

/// Fine-tune a single-input model; the model ends up holding the weights of
/// the epoch with the best validation accuracy.
pub fn train_single(
    model: &mut SingleInputModel,
    train: &SplitDataset,
    val: &SplitDataset,
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
    let mut best: Option<(usize, f64, Vec<ArrayD<f64>>)> = None;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = load_batch(train, chunk, input_size, &config.augment, Phase::Train {
                seed: config.seed,
                epoch,
            })?;
            let (loss, correct) = gradient_step(model, &batch, config, &mut opt)
                .map_err(|e| CoreError::Training(format!("epoch {epoch}: {e}")))?;
            epoch_loss += loss * chunk.len() as f64;
            epoch_correct += correct;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let train_accuracy = epoch_correct as f64 / train.len() as f64;
        let (val_loss, val_accuracy) = eval_pass(model, val, config)?;

        log.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            alpha: None,
            beta: None,
            gamma: None,
        });

        let improved = best.as_ref().map_or(true, |(_, acc, _)| val_accuracy > *acc);
        if improved {
            best = Some((epoch, val_accuracy, snapshot(&model.params())));
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
    restore(model.params_mut(), &snap);
    Ok(TrainReport { log, best_epoch, best_val_accuracy, stopped_early })
}
