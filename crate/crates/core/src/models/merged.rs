//! Feature-level fusion model.
//!
//! The trained branch classifiers give up their heads; their backbones embed
//! the whole photo, its face crops and its person crops. Per-branch features
//! are averaged over crops, linearly combined with trainable scalars, and a
//! new head (trained from scratch) classifies the fused vector.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Task;
use crate::error::{CoreError, Result};
use crate::nn::{softmax_rows, Backbone, BackboneFamily, Dense, Param};

use super::fusion::ProbabilityVector;
use super::single::SingleInputModel;

/// The learnable branch-combination scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FusionWeights {
    /// Unbiased start: plain averaging of the three branches.
    pub fn uniform() -> FusionWeights {
        FusionWeights { alpha: 1.0 / 3.0, beta: 1.0 / 3.0, gamma: 1.0 / 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            return Err(CoreError::Model("fusion weights must be finite".into()));
        }
        Ok(())
    }
}

/// Three branch backbones, fusion scalars and a fresh head.
#[derive(Debug, Clone)]
pub struct MergedModel {
    pub family: BackboneFamily,
    pub task: Task,
    pub image_backbone: Backbone,
    pub faces_backbone: Backbone,
    pub people_backbone: Backbone,
    /// `[alpha, beta, gamma]` as one trainable tensor.
    pub fusion: Param,
    pub head: Dense,
    /// When set (the default), only the fusion scalars and head train.
    pub freeze_backbones: bool,
    pub seed: u64,
}

/// Combine three trained single-input models into a merged model.
///
/// The branch heads are discarded; the new head is randomly initialized from
/// `seed` and fusion starts at plain averaging.
pub fn build_merged(
    image: &SingleInputModel,
    faces: &SingleInputModel,
    people: &SingleInputModel,
    task: Task,
    seed: u64,
) -> Result<MergedModel> {
    let family = image.spec.family;
    for (name, m) in [("faces", faces), ("people", people)] {
        if m.spec.family != family {
            return Err(CoreError::Model(format!(
                "branch backbone families differ: image is {family}, {name} is {}",
                m.spec.family
            )));
        }
    }
    for (name, m) in [("image", image), ("faces", faces), ("people", people)] {
        if m.task != task {
            return Err(CoreError::Model(format!(
                "{name} branch was trained for task {}, merged model wants {task}",
                m.task
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = Dense::new(&mut rng, "head", family.feature_dim(), task.num_classes());
    // Small random start: with frozen branches the head is the only real
    // learner, and a full-scale random init would first have to be unlearned
    // before the fused features can be read out.
    head.weight.value.mapv_inplace(|v| v * 1e-2);
    let w = FusionWeights::uniform();
    let fusion = Param::new(
        "fusion.weights",
        ndarray::ArrayD::from_shape_vec(vec![3], vec![w.alpha, w.beta, w.gamma]).expect("shape"),
    );
    Ok(MergedModel {
        family,
        task,
        image_backbone: image.backbone.clone(),
        faces_backbone: faces.backbone.clone(),
        people_backbone: people.backbone.clone(),
        fusion,
        head,
        freeze_backbones: true,
        seed,
    })
}

impl MergedModel {
    pub fn fusion_weights(&self) -> FusionWeights {
        FusionWeights {
            alpha: self.fusion.value[[0]],
            beta: self.fusion.value[[1]],
            gamma: self.fusion.value[[2]],
        }
    }

    pub fn set_fusion_weights(&mut self, w: FusionWeights) {
        self.fusion.value[[0]] = w.alpha;
        self.fusion.value[[1]] = w.beta;
        self.fusion.value[[2]] = w.gamma;
    }

    pub fn feature_dim(&self) -> usize {
        self.family.feature_dim()
    }

    pub fn input_size(&self) -> u32 {
        self.family.input_size()
    }

    fn check_geometry(&self, x: &Array3<f64>) -> Result<()> {
        let (c, h, w) = x.dim();
        let s = self.input_size() as usize;
        if c != 3 || h != s || w != s {
            return Err(CoreError::Model(format!(
                "input geometry {c}x{h}x{w} does not match backbone input 3x{s}x{s}"
            )));
        }
        Ok(())
    }

    /// Mean branch feature over a list of crops; zero vector when the list
    /// is empty so photos without detections still classify.
    fn branch_feature(&self, backbone: &Backbone, crops: &[Array3<f64>]) -> Result<Array2<f64>> {
        let dim = self.feature_dim();
        if crops.is_empty() {
            return Ok(Array2::zeros((1, dim)));
        }
        for c in crops {
            self.check_geometry(c)?;
        }
        let mut batch =
            Array4::zeros((crops.len(), 3, self.input_size() as usize, self.input_size() as usize));
        for (i, c) in crops.iter().enumerate() {
            batch.index_axis_mut(Axis(0), i).assign(c);
        }
        let feats = backbone.forward(&batch);
        Ok(feats.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0)))
    }

    /// Fused feature: `alpha*f_img + beta*mean(f_faces) + gamma*mean(f_people)`.
    pub fn fuse(&self, f_img: &Array2<f64>, f_faces: &Array2<f64>, f_people: &Array2<f64>) -> Array2<f64> {
        let w = self.fusion_weights();
        f_img * w.alpha + &(f_faces * w.beta) + &(f_people * w.gamma)
    }

    /// Eval-mode prediction for one photo and its crops.
    pub fn forward(
        &self,
        photo: &Array3<f64>,
        faces: &[Array3<f64>],
        people: &[Array3<f64>],
    ) -> Result<ProbabilityVector> {
        self.check_geometry(photo)?;
        let batch = photo.clone().insert_axis(Axis(0));
        let f_img = self.image_backbone.forward(&batch);
        let f_faces = self.branch_feature(&self.faces_backbone, faces)?;
        let f_people = self.branch_feature(&self.people_backbone, people)?;
        let fused = self.fuse(&f_img, &f_faces, &f_people);
        let logits = self.head.forward(&fused, None);
        let probs = softmax_rows(&logits);
        ProbabilityVector::new(probs.row(0).to_vec())
    }

    /// Parameters that train under the current freeze policy.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = vec![&mut self.fusion];
        p.extend(self.head.params_mut());
        if !self.freeze_backbones {
            p.extend(self.image_backbone.params_mut());
            p.extend(self.faces_backbone.params_mut());
            p.extend(self.people_backbone.params_mut());
        }
        p
    }

    pub fn trainable_param_count(&mut self) -> usize {
        self.trainable_params_mut().iter().map(|p| p.len()).sum()
    }

    /// All parameters, for serialization. Backbone names are prefixed with
    /// their branch.
    pub fn named_tensors(&self) -> Vec<(String, &ndarray::ArrayD<f64>)> {
        let mut out = Vec::new();
        for (prefix, backbone) in [
            ("image", &self.image_backbone),
            ("faces", &self.faces_backbone),
            ("people", &self.people_backbone),
        ] {
            for p in backbone.params() {
                out.push((format!("{prefix}.{}", p.name), &p.value));
            }
        }
        out.push((self.fusion.name.clone(), &self.fusion.value));
        for p in self.head.params() {
            out.push((p.name.clone(), &p.value));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::single::{build_single, BackboneSpec, Branch};

    fn models(family: BackboneFamily, task: Task) -> (SingleInputModel, SingleInputModel, SingleInputModel) {
        let spec = BackboneSpec::new(family, false);
        (
            build_single(spec, task, Branch::Image, 1, None).unwrap(),
            build_single(spec, task, Branch::Faces, 2, None).unwrap(),
            build_single(spec, task, Branch::People, 3, None).unwrap(),
        )
    }

    fn rand_image(seed: u64, size: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, size, size), |_| crate::nn::normal_sample(&mut rng).abs() * 0.3)
    }

    #[test]
    fn merged_construction_and_trainable_count() {
        let (i, f, p) = models(BackboneFamily::Resnet50Class, Task::Context);
        let mut m = build_merged(&i, &f, &p, Task::Context, 7).unwrap();
        let head_params = 64 * 9 + 9;
        assert_eq!(m.trainable_param_count(), 3 + head_params);
        let w = m.fusion_weights();
        assert!((w.alpha - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.alpha + w.beta + w.gamma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unfreezing_adds_exactly_backbone_params() {
        let (i, f, p) = models(BackboneFamily::Resnet50Class, Task::Context);
        let mut m = build_merged(&i, &f, &p, Task::Context, 7).unwrap();
        let frozen = m.trainable_param_count();
        m.freeze_backbones = false;
        let unfrozen = m.trainable_param_count();
        let backbone_params = 3 * m.image_backbone.param_count();
        assert_eq!(unfrozen - frozen, backbone_params);
    }

    #[test]
    fn mixed_families_are_rejected() {
        let spec_r = BackboneSpec::new(BackboneFamily::Resnet50Class, false);
        let spec_i = BackboneSpec::new(BackboneFamily::InceptionV3Class, false);
        let i = build_single(spec_r, Task::Context, Branch::Image, 1, None).unwrap();
        let f = build_single(spec_i, Task::Context, Branch::Faces, 2, None).unwrap();
        let p = build_single(spec_r, Task::Context, Branch::People, 3, None).unwrap();
        assert!(build_merged(&i, &f, &p, Task::Context, 7).is_err());
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let (i, f, p) = models(BackboneFamily::Resnet50Class, Task::Context);
        assert!(build_merged(&i, &f, &p, Task::Dating, 7).is_err());
    }

    #[test]
    fn one_hot_alpha_ignores_crop_inputs() {
        let (i, f, p) = models(BackboneFamily::Resnet50Class, Task::Context);
        let mut m = build_merged(&i, &f, &p, Task::Context, 7).unwrap();
        m.set_fusion_weights(FusionWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 });
        let size = m.input_size() as usize;
        let photo = rand_image(1, size);
        let crops_a = vec![rand_image(2, size)];
        let crops_b = vec![rand_image(3, size), rand_image(4, size)];
        let out_a = m.forward(&photo, &crops_a, &crops_a).unwrap();
        let out_b = m.forward(&photo, &crops_b, &[]).unwrap();
        assert_eq!(out_a.values(), out_b.values());
    }

    #[test]
    fn face_crop_order_does_not_matter() {
        let (i, f, p) = models(BackboneFamily::Resnet50Class, Task::Context);
        let m = build_merged(&i, &f, &p, Task::Context, 7).unwrap();
        let size = m.input_size() as usize;
        let photo = rand_image(1, size);
        let c1 = rand_image(2, size);
        let c2 = rand_image(3, size);
        let a = m.forward(&photo, &[c1.clone(), c2.clone()], &[]).unwrap();
        let b = m.forward(&photo, &[c2, c1], &[]).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_crop_lists_still_classify() {
        let (i, f, p) = models(BackboneFamily::Resnet50Class, Task::Context);
        let m = build_merged(&i, &f, &p, Task::Context, 7).unwrap();
        let photo = rand_image(1, m.input_size() as usize);
        let out = m.forward(&photo, &[], &[]).unwrap();
        let sum: f64 = out.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
