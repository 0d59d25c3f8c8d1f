//! Model bundles on disk: one directory per model holding a JSON metadata
//! file and a binary weights file. f64 little-endian bytes round-trip
//! bit-exactly, so a reloaded model reproduces forward outputs identically.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::catalog::Task;
use crate::error::{CoreError, Result};
use crate::nn::{Backbone, BackboneFamily, Param};

use super::merged::{FusionWeights, MergedModel};
use super::single::{BackboneSpec, Branch, SingleInputModel};

const WEIGHTS_MAGIC: &[u8; 4] = b"CLW1";
pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    format: String,
    kind: String,
    family: BackboneFamily,
    feature_dim: usize,
    input_size: u32,
    task: Task,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    branch: Option<Branch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pretrained: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fusion: Option<FusionWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    freeze_backbones: Option<bool>,
    /// Training configuration that produced this model, recorded verbatim.
    #[serde(skip_serializing_if = "Option::is_none")]
    train_config: Option<serde_json::Value>,
}

/// Write named tensors as `CLW1 | count | (name_len name ndim dims... data)*`.
pub fn write_weights(path: &Path, tensors: &[(String, &ArrayD<f64>)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, value) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let shape = value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let slice = value.as_slice().ok_or_else(|| CoreError::Model(format!("tensor {name} not contiguous")))?;
        for v in slice {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(&buf).map_err(|e| CoreError::io(path, e))
}

/// Read a weights file back into name -> tensor.
pub fn read_weights(path: &Path) -> Result<BTreeMap<String, ArrayD<f64>>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CoreError::io(path, e))?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        let start = *cursor;
        let end = start + n;
        if end > bytes.len() {
            return Err(CoreError::Model(format!("truncated weights file {}", path.display())));
        }
        *cursor = end;
        Ok(&bytes[start..end])
    };
    if take(&mut cursor, 4)? != WEIGHTS_MAGIC {
        return Err(CoreError::Model(format!("{} is not a weights file", path.display())));
    }
    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|e| CoreError::Model(format!("bad tensor name: {e}")))?;
        let ndim = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut cursor, n * 8)?;
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let arr = ArrayD::from_shape_vec(shape, data)
            .map_err(|e| CoreError::Model(format!("bad tensor shape for {name}: {e}")))?;
        out.insert(name, arr);
    }
    Ok(out)
}

/// Copy stored tensors into params, matching `prefix + param.name`.
pub fn load_params(
    params: &mut [&mut Param],
    tensors: &BTreeMap<String, ArrayD<f64>>,
    prefix: &str,
) -> Result<()> {
    for p in params.iter_mut() {
        let key = format!("{prefix}{}", p.name);
        let stored = tensors
            .get(&key)
            .ok_or_else(|| CoreError::Model(format!("weights file is missing tensor {key}")))?;
        if stored.shape() != p.value.shape() {
            return Err(CoreError::Model(format!(
                "tensor {key} has shape {:?}, expected {:?}",
                stored.shape(),
                p.value.shape()
            )));
        }
        p.value.assign(stored);
    }
    Ok(())
}

/// Persist a single-input model bundle.
pub fn save_single(model: &SingleInputModel, dir: &Path, train_config: Option<serde_json::Value>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let meta = ModelMeta {
        format: "chronolens-model/1".into(),
        kind: "single".into(),
        family: model.spec.family,
        feature_dim: model.spec.feature_dim,
        input_size: model.input_size(),
        task: model.task,
        seed: model.seed,
        branch: Some(model.branch),
        pretrained: Some(model.spec.pretrained),
        fusion: None,
        freeze_backbones: None,
        train_config,
    };
    let meta_path = dir.join(MODEL_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| CoreError::io(&meta_path, e))?;
    let tensors: Vec<(String, &ArrayD<f64>)> =
        model.params().into_iter().map(|p| (p.name.clone(), &p.value)).collect();
    write_weights(&dir.join(WEIGHTS_FILE), &tensors)
}

/// Load a single-input model bundle.
pub fn load_single(dir: &Path) -> Result<SingleInputModel> {
    let meta_path = dir.join(MODEL_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text)?;
    if meta.kind != "single" {
        return Err(CoreError::Model(format!("{} holds a {} model, expected single", dir.display(), meta.kind)));
    }
    let spec = BackboneSpec {
        family: meta.family,
        pretrained: meta.pretrained.unwrap_or(false),
        feature_dim: meta.feature_dim,
    };
    spec.validate()?;
    let branch = meta.branch.ok_or_else(|| CoreError::Model("single model bundle lacks branch".into()))?;
    // Build with fresh params, then overwrite every tensor from the file.
    let mut model = super::single::build_single(
        BackboneSpec { pretrained: false, ..spec },
        meta.task,
        branch,
        meta.seed,
        None,
    )?;
    model.spec = spec;
    let tensors = read_weights(&dir.join(WEIGHTS_FILE))?;
    load_params(&mut model.params_mut(), &tensors, "")?;
    Ok(model)
}

/// Persist a merged model bundle.
pub fn save_merged(model: &MergedModel, dir: &Path, train_config: Option<serde_json::Value>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let meta = ModelMeta {
        format: "chronolens-model/1".into(),
        kind: "merged".into(),
        family: model.family,
        feature_dim: model.feature_dim(),
        input_size: model.input_size(),
        task: model.task,
        seed: model.seed,
        branch: None,
        pretrained: None,
        fusion: Some(model.fusion_weights()),
        freeze_backbones: Some(model.freeze_backbones),
        train_config,
    };
    let meta_path = dir.join(MODEL_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| CoreError::io(&meta_path, e))?;
    let named = model.named_tensors();
    let tensors: Vec<(String, &ArrayD<f64>)> = named.into_iter().collect();
    write_weights(&dir.join(WEIGHTS_FILE), &tensors)
}

/// Load a merged model bundle.
pub fn load_merged(dir: &Path) -> Result<MergedModel> {
    let meta_path = dir.join(MODEL_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text)?;
    if meta.kind != "merged" {
        return Err(CoreError::Model(format!("{} holds a {} model, expected merged", dir.display(), meta.kind)));
    }
    let tensors = read_weights(&dir.join(WEIGHTS_FILE))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(meta.seed);
    use rand::SeedableRng;
    let mut image_backbone = Backbone::new(meta.family, &mut rng);
    let mut faces_backbone = Backbone::new(meta.family, &mut rng);
    let mut people_backbone = Backbone::new(meta.family, &mut rng);
    load_params(&mut image_backbone.params_mut(), &tensors, "image.")?;
    load_params(&mut faces_backbone.params_mut(), &tensors, "faces.")?;
    load_params(&mut people_backbone.params_mut(), &tensors, "people.")?;
    let mut head = crate::nn::Dense::new(&mut rng, "head", meta.family.feature_dim(), meta.task.num_classes());
    load_params(&mut head.params_mut(), &tensors, "")?;
    let fusion_values = tensors
        .get("fusion.weights")
        .ok_or_else(|| CoreError::Model("weights file is missing tensor fusion.weights".into()))?;
    let fusion = Param::new("fusion.weights", fusion_values.clone());
    let model = MergedModel {
        family: meta.family,
        task: meta.task,
        image_backbone,
        faces_backbone,
        people_backbone,
        fusion,
        head,
        freeze_backbones: meta.freeze_backbones.unwrap_or(true),
        seed: meta.seed,
    };
    if let Some(w) = meta.fusion {
        w.validate()?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::single::{build_single, Branch};
    use crate::models::merged::build_merged;
    use ndarray::{Array3, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_batch(seed: u64, size: usize) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((2, 3, size, size), |_| crate::nn::normal_sample(&mut rng).abs() * 0.2)
    }

    #[test]
    fn weights_file_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let a = ArrayD::from_shape_vec(vec![2, 3], vec![1.0, -2.5, 3e-300, f64::MIN_POSITIVE, 0.1 + 0.2, -0.0])
            .unwrap();
        let b = ArrayD::from_shape_vec(vec![3], vec![std::f64::consts::PI, 1e300, -1e-300]).unwrap();
        let path = dir.path().join("w.bin");
        write_weights(&path, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let tensors = read_weights(&path).unwrap();
        assert_eq!(tensors["a"], a);
        assert_eq!(tensors["b"], b);
    }

    #[test]
    fn single_bundle_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BackboneSpec::new(BackboneFamily::Densenet121Class, false);
        let model = build_single(spec, Task::Context, Branch::Image, 42, None).unwrap();
        save_single(&model, dir.path(), None).unwrap();
        let loaded = load_single(dir.path()).unwrap();
        let x = rand_batch(9, model.input_size() as usize);
        assert_eq!(model.forward_logits(&x).unwrap(), loaded.forward_logits(&x).unwrap());
        assert_eq!(loaded.branch, Branch::Image);
    }

    #[test]
    fn merged_bundle_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BackboneSpec::new(BackboneFamily::Resnet50Class, false);
        let image = build_single(spec, Task::Context, Branch::Image, 1, None).unwrap();
        let faces = build_single(spec, Task::Context, Branch::Faces, 2, None).unwrap();
        let people = build_single(spec, Task::Context, Branch::People, 3, None).unwrap();
        let mut merged = build_merged(&image, &faces, &people, Task::Context, 11).unwrap();
        merged.set_fusion_weights(crate::models::FusionWeights { alpha: 0.6, beta: 0.1, gamma: 0.3 });
        save_merged(&merged, dir.path(), None).unwrap();
        let loaded = load_merged(dir.path()).unwrap();
        let size = merged.input_size() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let photo = Array3::from_shape_fn((3, size, size), |_| crate::nn::normal_sample(&mut rng).abs() * 0.2);
        let crop = Array3::from_shape_fn((3, size, size), |_| crate::nn::normal_sample(&mut rng).abs() * 0.2);
        let a = merged.forward(&photo, &[crop.clone()], &[]).unwrap();
        let b = loaded.forward(&photo, &[crop], &[]).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(loaded.fusion_weights(), merged.fusion_weights());
    }

    #[test]
    fn pretrained_backbone_loads_from_prior_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BackboneSpec::new(BackboneFamily::Resnet50Class, false);
        let donor = build_single(spec, Task::Context, Branch::Image, 123, None).unwrap();
        save_single(&donor, dir.path(), None).unwrap();

        let pre_spec = BackboneSpec::new(BackboneFamily::Resnet50Class, true);
        let model = build_single(
            pre_spec,
            Task::Dating,
            Branch::Image,
            777,
            Some(&dir.path().join(WEIGHTS_FILE)),
        )
        .unwrap();
        // Backbone features match the donor, head is fresh (70 classes).
        let x = rand_batch(4, model.input_size() as usize);
        assert_eq!(model.backbone.forward(&x), donor.backbone.forward(&x));
        assert_eq!(model.head.out_dim, 70);
    }
}
