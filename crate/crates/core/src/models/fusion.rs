//! Score vectors, feature vectors and the score-level ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{argmax_lowest, softmax_rows};

/// Tolerance for the probability-simplex invariant.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// A per-class score vector on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<ProbabilityVector> {
        if values.is_empty() {
            return Err(CoreError::Model("empty probability vector".into()));
        }
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(CoreError::Model("probability entries must be finite and non-negative".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(CoreError::Model(format!("probability vector sums to {sum}, not 1")));
        }
        Ok(ProbabilityVector(values))
    }

    pub fn from_logits(logits: &[f64]) -> ProbabilityVector {
        let arr = ndarray::Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("shape");
        let p = softmax_rows(&arr);
        ProbabilityVector(p.row(0).to_vec())
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> ProbabilityVector {
        ProbabilityVector(vec![1.0 / k as f64; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Predicted class; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.0)
    }
}

/// A backbone embedding. Entries must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<FeatureVector> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Model("feature vector has non-finite entries".into()));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> FeatureVector {
        FeatureVector(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Element-wise arithmetic mean of equal-length vectors.
pub fn mean_vectors(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| CoreError::Model("cannot aggregate an empty list of vectors".into()))?;
    let len = first.len();
    let mut out = vec![0.0; len];
    for v in vectors {
        if v.len() != len {
            return Err(CoreError::Model(format!(
                "ragged aggregation: lengths {len} vs {}",
                v.len()
            )));
        }
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    Ok(out)
}

/// Mean of probability vectors, L1-renormalized back onto the simplex.
pub fn aggregate_probabilities(vectors: &[ProbabilityVector]) -> Result<ProbabilityVector> {
    let slices: Vec<&[f64]> = vectors.iter().map(|v| v.values()).collect();
    let mut mean = mean_vectors(&slices)?;
    let sum: f64 = mean.iter().sum();
    if sum <= 0.0 {
        return Err(CoreError::Model("aggregated probability mass is zero".into()));
    }
    for v in &mut mean {
        *v /= sum;
    }
    ProbabilityVector::new(mean)
}

/// Mean of feature vectors.
pub fn aggregate_features(vectors: &[FeatureVector]) -> Result<FeatureVector> {
    let slices: Vec<&[f64]> = vectors.iter().map(|v| v.values()).collect();
    FeatureVector::new(mean_vectors(&slices)?)
}

/// Which branches participate in an ensemble prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchFlags {
    pub image: bool,
    pub faces: bool,
    pub people: bool,
}

impl BranchFlags {
    pub const ALL: BranchFlags = BranchFlags { image: true, faces: true, people: true };

    pub fn only_image() -> BranchFlags {
        BranchFlags { image: true, faces: false, people: false }
    }
}

/// Score-level fusion: aggregate each included branch, then average the
/// branch vectors and renormalize.
///
/// A branch with no data (no photo score, zero detections) is simply left
/// out of the cross-branch mean; predicting from whatever branches exist
/// keeps the model total over archives where detections are sparse.
pub fn ensemble_predict(
    photo: Option<&ProbabilityVector>,
    faces: &[ProbabilityVector],
    people: &[ProbabilityVector],
    include: BranchFlags,
) -> Result<ProbabilityVector> {
    let mut branch_vectors: Vec<ProbabilityVector> = Vec::with_capacity(3);
    if include.image {
        if let Some(p) = photo {
            branch_vectors.push(p.clone());
        }
    }
    if include.faces && !faces.is_empty() {
        branch_vectors.push(aggregate_probabilities(faces)?);
    }
    if include.people && !people.is_empty() {
        branch_vectors.push(aggregate_probabilities(people)?);
    }
    if branch_vectors.is_empty() {
        return Err(CoreError::Model("no included branch has any data".into()));
    }
    aggregate_probabilities(&branch_vectors)
}

/// Logit-space variant of the ensemble (per-branch mean of raw scores, then
/// cross-branch mean, softmax at the end). Kept as an explicit alternative
/// since "score" fusion can be read either way.
pub fn ensemble_predict_logits(
    photo: Option<&[f64]>,
    faces: &[Vec<f64>],
    people: &[Vec<f64>],
    include: BranchFlags,
) -> Result<ProbabilityVector> {
    let mut branch_vectors: Vec<Vec<f64>> = Vec::with_capacity(3);
    if include.image {
        if let Some(p) = photo {
            branch_vectors.push(p.to_vec());
        }
    }
    if include.faces && !faces.is_empty() {
        let slices: Vec<&[f64]> = faces.iter().map(|v| v.as_slice()).collect();
        branch_vectors.push(mean_vectors(&slices)?);
    }
    if include.people && !people.is_empty() {
        let slices: Vec<&[f64]> = people.iter().map(|v| v.as_slice()).collect();
        branch_vectors.push(mean_vectors(&slices)?);
    }
    if branch_vectors.is_empty() {
        return Err(CoreError::Model("no included branch has any data".into()));
    }
    let slices: Vec<&[f64]> = branch_vectors.iter().map(|v| v.as_slice()).collect();
    Ok(ProbabilityVector::from_logits(&mean_vectors(&slices)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn probability_vector_validates_simplex() {
        assert!(ProbabilityVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityVector::new(vec![]).is_err());
    }

    #[test]
    fn aggregate_means_and_renormalizes() {
        let out = aggregate_probabilities(&[pv(&[0.2, 0.8]), pv(&[0.6, 0.4])]).unwrap();
        assert!((out.values()[0] - 0.4).abs() < 1e-12);
        assert!((out.values()[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn aggregate_of_single_vector_is_identity() {
        let v = pv(&[0.3, 0.7]);
        assert_eq!(aggregate_probabilities(&[v.clone()]).unwrap(), v);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a = pv(&[0.1, 0.9]);
        let b = pv(&[0.5, 0.5]);
        let c = pv(&[0.9, 0.1]);
        let x = aggregate_probabilities(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let y = aggregate_probabilities(&[c, a, b]).unwrap();
        for (u, v) in x.values().iter().zip(y.values()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn ragged_or_empty_aggregation_is_an_error() {
        assert!(mean_vectors(&[]).is_err());
        assert!(mean_vectors(&[&[0.1, 0.9][..], &[1.0][..]]).is_err());
    }

    #[test]
    fn ensemble_of_identical_branches_is_identity() {
        let v = pv(&[0.25, 0.75]);
        let out = ensemble_predict(Some(&v), &[v.clone()], &[v.clone()], BranchFlags::ALL).unwrap();
        for (a, b) in out.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_single_included_branch_equals_its_aggregate() {
        let faces = [pv(&[0.2, 0.8]), pv(&[0.4, 0.6])];
        let include = BranchFlags { image: false, faces: true, people: false };
        let out = ensemble_predict(None, &faces, &[], include).unwrap();
        let direct = aggregate_probabilities(&faces).unwrap();
        assert_eq!(out, direct);
    }

    #[test]
    fn ensemble_hand_arithmetic() {
        let out = ensemble_predict(
            Some(&pv(&[1.0, 0.0])),
            &[pv(&[0.0, 1.0])],
            &[pv(&[0.5, 0.5])],
            BranchFlags::ALL,
        )
        .unwrap();
        assert!((out.values()[0] - 0.5).abs() < 1e-12);
        assert!((out.values()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ensemble_drops_absent_branches() {
        let v = pv(&[0.9, 0.1]);
        // People absent: mean over image + faces only.
        let out = ensemble_predict(Some(&v), &[pv(&[0.1, 0.9])], &[], BranchFlags::ALL).unwrap();
        assert!((out.values()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ensemble_with_no_data_is_an_error() {
        assert!(ensemble_predict(None, &[], &[], BranchFlags::ALL).is_err());
        let v = pv(&[1.0, 0.0]);
        // Data exists but no branch is included.
        let none = BranchFlags { image: false, faces: false, people: false };
        assert!(ensemble_predict(Some(&v), &[], &[], none).is_err());
    }

    #[test]
    fn logit_ensemble_lands_on_simplex() {
        let out = ensemble_predict_logits(
            Some(&[2.0, -1.0]),
            &[vec![0.0, 1.0], vec![1.0, 0.0]],
            &[],
            BranchFlags::ALL,
        )
        .unwrap();
        let sum: f64 = out.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
