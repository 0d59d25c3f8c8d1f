//! Training: optimization recipe, augmentation and the two training loops.

mod augment;
mod data;
mod log;
mod merged_loop;
mod single_loop;

pub use augment::{augment, eval_transform, AugmentConfig};
pub use data::{
    load_eval_tensor, merged_dataset, single_branch_dataset, Batch, LabeledImage, MergedDataset,
    MergedItem, SplitDataset,
};
pub use log::{EpochRecord, TrainingLog};
pub use merged_loop::{merged_loss_and_fusion_grads, train_merged, MergedTensorBatch};
pub use single_loop::train_single;

use serde::{Deserialize, Serialize};

use crate::catalog::ClassWeightVector;
use crate::error::{CoreError, Result};
use crate::models::Branch;

/// Optimization settings. Defaults follow the fine-tuning recipe: Adam,
/// learning rate 1e-4, weight decay 5e-4, random crop + horizontal flip,
/// batch 32 for whole images and 64 for face/person crops.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without validation-accuracy improvement.
    pub early_stop_patience: Option<usize>,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub class_weights: ClassWeightVector,
}

impl TrainConfig {
    pub fn new(branch: Branch, class_weights: ClassWeightVector, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            batch_size: match branch {
                Branch::Image => 32,
                Branch::Faces | Branch::People => 64,
            },
            epochs: 30,
            early_stop_patience: Some(5),
            augment: AugmentConfig::default(),
            seed,
            class_weights,
        }
    }

    /// Sanity checks. A zero learning rate is allowed (useful to verify that
    /// no parameter moves); negative values are not.
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(CoreError::Training(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(CoreError::Training(format!("invalid weight decay {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Training("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(CoreError::Training("epoch count must be >= 1".into()));
        }
        self.augment.validate()
    }
}

/// Outcome of a training run: per-epoch log plus the selected checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    /// Epoch whose weights the returned model carries (max val accuracy,
    /// earliest on ties).
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Seed for a per-item augmentation stream, decoupled from iteration order
/// so parallel loading stays deterministic.
pub(crate) fn stream_seed(base: u64, epoch: usize, item: usize) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1 + epoch as u64))
        .wrapping_add(0xBF58_476D_1CE4_E5B9u64.wrapping_mul(1 + item as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
