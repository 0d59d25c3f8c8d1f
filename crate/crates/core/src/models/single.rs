//! Single-input classifiers: one fine-tuned backbone plus a fresh head.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Task;
use crate::error::{CoreError, Result};
use crate::nn::{softmax_rows, Backbone, BackboneFamily, Dense, DenseCache, Param};

use super::bundle;
use super::fusion::ProbabilityVector;

/// Backbone choice for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub pretrained: bool,
    pub feature_dim: usize,
}

impl BackboneSpec {
    pub fn new(family: BackboneFamily, pretrained: bool) -> BackboneSpec {
        BackboneSpec { family, pretrained, feature_dim: family.feature_dim() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim != self.family.feature_dim() {
            return Err(CoreError::Model(format!(
                "feature_dim {} does not match family {} ({})",
                self.feature_dim,
                self.family,
                self.family.feature_dim()
            )));
        }
        Ok(())
    }
}

/// Which view of a photo the model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Image,
    Faces,
    People,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Image, Branch::Faces, Branch::People];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Image => "image",
            Branch::Faces => "faces",
            Branch::People => "people",
        }
    }

    pub fn parse(s: &str) -> Option<Branch> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" => Some(Branch::Image),
            "faces" => Some(Branch::Faces),
            "people" => Some(Branch::People),
            _ => None,
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A backbone with a task-sized classification head.
#[derive(Debug, Clone)]
pub struct SingleInputModel {
    pub spec: BackboneSpec,
    pub task: Task,
    pub branch: Branch,
    pub backbone: Backbone,
    pub head: Dense,
    pub seed: u64,
}

/// Construct a single-input model. The head is always randomly initialized
/// from `seed`; backbone weights are loaded from `pretrained_weights` when
/// the spec asks for a pretrained backbone, otherwise initialized from the
/// same seed.
pub fn build_single(
    spec: BackboneSpec,
    task: Task,
    branch: Branch,
    seed: u64,
    pretrained_weights: Option<&Path>,
) -> Result<SingleInputModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut backbone = Backbone::new(spec.family, &mut rng);
    if spec.pretrained {
        let path = pretrained_weights.ok_or_else(|| {
            CoreError::Model(format!(
                "missing pretrained weights for {} backbone",
                spec.family
            ))
        })?;
        let tensors = bundle::read_weights(path)?;
        bundle::load_params(&mut backbone.params_mut(), &tensors, "")?;
    }
    let head = Dense::new(&mut rng, "head", spec.feature_dim, task.num_classes());
    Ok(SingleInputModel { spec, task, branch, backbone, head, seed })
}

impl SingleInputModel {
    pub fn num_classes(&self) -> usize {
        self.task.num_classes()
    }

    pub fn input_size(&self) -> u32 {
        self.spec.family.input_size()
    }

    fn check_geometry(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let s = self.input_size() as usize;
        if c != 3 || h != s || w != s {
            return Err(CoreError::Model(format!(
                "input geometry {c}x{h}x{w} does not match backbone input 3x{s}x{s}"
            )));
        }
        Ok(())
    }

    /// Eval-mode logits for a batch.
    pub fn forward_logits(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.check_geometry(x)?;
        let feat = self.backbone.forward(x);
        Ok(self.head.forward(&feat, None))
    }

    /// Eval-mode class probabilities for one image.
    pub fn forward_scores(&self, image: &Array3<f64>) -> Result<ProbabilityVector> {
        let batch = image.clone().insert_axis(Axis(0));
        Ok(self.forward_scores_batch(&batch)?.pop().expect("one row"))
    }

    /// Eval-mode class probabilities for a batch.
    pub fn forward_scores_batch(&self, x: &Array4<f64>) -> Result<Vec<ProbabilityVector>> {
        let logits = self.forward_logits(x)?;
        let probs = softmax_rows(&logits);
        probs
            .rows()
            .into_iter()
            .map(|r| ProbabilityVector::new(r.to_vec()))
            .collect()
    }

    /// Training forward: caches backbone and head state, returns logits.
    pub fn forward_train(&mut self, x: &Array4<f64>, head_cache: &mut Option<DenseCache>) -> Result<Array2<f64>> {
        self.check_geometry(x)?;
        let feat = self.backbone.forward_train(x);
        Ok(self.head.forward(&feat, Some(head_cache)))
    }

    /// Backward from logit gradients through head and backbone.
    pub fn backward(&mut self, head_cache: &DenseCache, dlogits: &Array2<f64>) {
        let dfeat = self.head.backward(head_cache, dlogits);
        let _ = self.backbone.backward(&dfeat);
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn input(seed: u64, n: usize, size: usize) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((n, 3, size, size), |_| crate::nn::normal_sample(&mut rng).abs() * 0.2)
    }

    #[test]
    fn dating_head_has_70_outputs_context_9() {
        let spec = BackboneSpec::new(BackboneFamily::Resnet50Class, false);
        let dating = build_single(spec, Task::Dating, Branch::Image, 1, None).unwrap();
        assert_eq!(dating.head.out_dim, 70);
        assert_eq!(dating.head.in_dim, spec.feature_dim);
        let context = build_single(spec, Task::Context, Branch::Image, 1, None).unwrap();
        assert_eq!(context.head.out_dim, 9);
    }

    #[test]
    fn scores_sum_to_one_and_eval_is_deterministic() {
        let spec = BackboneSpec::new(BackboneFamily::InceptionV3Class, false);
        let model = build_single(spec, Task::Context, Branch::Image, 7, None).unwrap();
        let size = model.input_size() as usize;
        let x = input(3, 2, size);
        let a = model.forward_scores_batch(&x).unwrap();
        let b = model.forward_scores_batch(&x).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.values(), pb.values());
            let sum: f64 = pa.values().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_reproduces_untrained_outputs() {
        let spec = BackboneSpec::new(BackboneFamily::Resnet50Class, false);
        let m1 = build_single(spec, Task::Context, Branch::Faces, 99, None).unwrap();
        let m2 = build_single(spec, Task::Context, Branch::Faces, 99, None).unwrap();
        let x = input(5, 1, m1.input_size() as usize);
        assert_eq!(
            m1.forward_logits(&x).unwrap(),
            m2.forward_logits(&x).unwrap()
        );
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let spec = BackboneSpec::new(BackboneFamily::Resnet50Class, false);
        let model = build_single(spec, Task::Dating, Branch::Image, 1, None).unwrap();
        let x = input(0, 1, 32);
        assert!(model.forward_logits(&x).is_err());
    }

    #[test]
    fn pretrained_without_weights_is_an_error() {
        let spec = BackboneSpec::new(BackboneFamily::Resnet50Class, true);
        let err = build_single(spec, Task::Dating, Branch::Image, 1, None);
        assert!(err.unwrap_err().to_string().contains("missing pretrained weights"));
    }
}
