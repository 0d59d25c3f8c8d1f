//! Weighted softmax cross-entropy.

use ndarray::Array2;

use crate::error::{CoreError, Result};

/// Row-wise softmax with the usual max-shift for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub dlogits: Array2<f64>,
    /// Samples whose argmax equals the label; for accuracy logging.
    pub correct: usize,
}

/// Class-weighted cross-entropy over a batch of logits.
///
/// `loss = Σ_i w_{y_i} · (−log p_i[y_i]) / Σ_i w_{y_i}`, the same
/// normalization by total sample weight used by mainstream frameworks, so
/// all-ones weights reduce exactly to the unweighted mean loss.
pub fn weighted_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<LossOutput> {
    let (n, k) = logits.dim();
    if n != labels.len() {
        return Err(CoreError::Training(format!(
            "batch size mismatch: {n} logits vs {} labels",
            labels.len()
        )));
    }
    if class_weights.len() != k {
        return Err(CoreError::Training(format!(
            "{} class weights for {k} classes",
            class_weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(CoreError::Training(format!("label {bad} out of range for {k} classes")));
    }

    let probs = softmax_rows(logits);
    let weight_sum: f64 = labels.iter().map(|&y| class_weights[y]).sum();
    if weight_sum <= 0.0 {
        return Err(CoreError::Training("total sample weight is zero".into()));
    }

    let mut loss = 0.0;
    let mut correct = 0;
    let mut dlogits = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let w = class_weights[y];
        let p = probs[[i, y]].max(1e-300);
        loss += w * (-p.ln());
        if argmax_lowest(probs.row(i).as_slice().unwrap()) == y {
            correct += 1;
        }
        let mut row = dlogits.row_mut(i);
        row *= w / weight_sum;
        row[y] -= w / weight_sum;
    }
    loss /= weight_sum;
    if !loss.is_finite() {
        return Err(CoreError::Training(format!("non-finite loss {loss}")));
    }
    Ok(LossOutput { loss, dlogits, correct })
}
