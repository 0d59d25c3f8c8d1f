//! Inverse-frequency class weights for the weighted cross-entropy loss.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::{Catalog, DatingLabelMap, Task};

/// Per-class loss weights. Strictly positive, mean exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightVector(Vec<f64>);

impl ClassWeightVector {
    /// Validate and wrap a weight vector.
    pub fn new(weights: Vec<f64>) -> Result<ClassWeightVector> {
        if weights.is_empty() {
            return Err(CoreError::InvalidArgument("empty class weight vector".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(CoreError::InvalidArgument("class weights must be finite and > 0".into()));
        }
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        if (mean - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidArgument(format!(
                "class weight mean must be 1 (got {mean})"
            )));
        }
        Ok(ClassWeightVector(weights))
    }

    /// All-ones weights: the weighted loss then equals the unweighted loss.
    pub fn uniform(num_classes: usize) -> ClassWeightVector {
        ClassWeightVector(vec![1.0; num_classes])
    }

    /// Build weights from raw per-class counts: `w_c ∝ 1/count_c`, classes
    /// with zero samples receive the largest observed weight, and the whole
    /// vector is rescaled to mean 1.
    pub fn from_counts(counts: &[usize]) -> Result<ClassWeightVector> {
        if counts.is_empty() || counts.iter().all(|&c| c == 0) {
            return Err(CoreError::Catalog("no samples to derive class weights from".into()));
        }
        let mut weights: Vec<f64> =
            counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
        let max_present = weights.iter().cloned().fold(0.0f64, f64::max);
        for w in &mut weights {
            if *w == 0.0 {
                *w = max_present;
            }
        }
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        for w in &mut weights {
            *w /= mean;
        }
        ClassWeightVector::new(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-class counts of a catalog under a task.
pub fn class_counts(catalog: &Catalog, task: Task, map: &DatingLabelMap) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; task.num_classes()];
    for r in catalog.records() {
        let idx = Catalog::class_index(r, task, map)?;
        counts[idx] += 1;
    }
    Ok(counts)
}

/// Inverse-frequency weights for the given task, computed over `catalog`
/// (callers pass the train split only).
pub fn class_weights(catalog: &Catalog, task: Task, map: &DatingLabelMap) -> Result<ClassWeightVector> {
    if catalog.is_empty() {
        return Err(CoreError::Catalog("cannot derive class weights from an empty catalog".into()));
    }
    ClassWeightVector::from_counts(&class_counts(catalog, task, map)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn inverse_frequency_mean_one() {
        let w = ClassWeightVector::from_counts(&[10, 30, 60]).unwrap();
        assert_close(w.as_slice(), &[2.0, 2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn uniform_counts_give_unit_weights() {
        let w = ClassWeightVector::from_counts(&[7, 7, 7, 7]).unwrap();
        assert_close(w.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        let w = ClassWeightVector::from_counts(&[1, 1]).unwrap();
        assert_close(w.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_count_class_gets_max_weight() {
        let w = ClassWeightVector::from_counts(&[10, 0, 40]).unwrap();
        // Raw: [0.1, 0.1, 0.025]; rescaled to mean 1.
        assert_close(w.as_slice(), &[4.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]);
        let mean = w.as_slice().iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_counts_is_an_error() {
        assert!(ClassWeightVector::from_counts(&[0, 0]).is_err());
        assert!(ClassWeightVector::from_counts(&[]).is_err());
    }

    #[test]
    fn validation_rejects_bad_vectors() {
        assert!(ClassWeightVector::new(vec![0.5, 1.5]).is_ok());
        assert!(ClassWeightVector::new(vec![2.0, 1.0]).is_err()); // mean != 1
        assert!(ClassWeightVector::new(vec![2.0, 0.0]).is_err()); // nonpositive
        assert!(ClassWeightVector::new(vec![]).is_err());
    }
}
