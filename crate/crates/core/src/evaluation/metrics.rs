//! Core metric functions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{DATING_YEAR_MAX, DATING_YEAR_MIN};
use crate::error::{CoreError, Result};
use crate::models::{aggregate_probabilities, ProbabilityVector};

fn check_paired(preds: usize, truths: usize) -> Result<()> {
    if preds != truths {
        return Err(CoreError::Evaluation(format!("{preds} predictions vs {truths} truths")));
    }
    if preds == 0 {
        return Err(CoreError::Evaluation("empty evaluation input".into()));
    }
    Ok(())
}

/// Fraction of predictions within `d` years of the truth.
pub fn time_distance_accuracy(pred_years: &[i32], true_years: &[i32], d: u32) -> Result<f64> {
    check_paired(pred_years.len(), true_years.len())?;
    let hits = pred_years
        .iter()
        .zip(true_years)
        .filter(|(p, t)| p.abs_diff(**t) <= d)
        .count();
    Ok(hits as f64 / pred_years.len() as f64)
}

/// Mean and population standard deviation of the absolute year error.
pub fn mean_abs_error(pred_years: &[i32], true_years: &[i32]) -> Result<(f64, f64)> {
    check_paired(pred_years.len(), true_years.len())?;
    let errors: Vec<f64> =
        pred_years.iter().zip(true_years).map(|(p, t)| p.abs_diff(*t) as f64).collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Fraction of samples whose true label ranks among the k highest scores.
/// Ties rank the lower class index first.
pub fn topk_accuracy(probs: &[ProbabilityVector], truths: &[usize], k: usize) -> Result<f64> {
    check_paired(probs.len(), truths.len())?;
    let num_classes = probs[0].len();
    if k < 1 || k > num_classes {
        return Err(CoreError::Evaluation(format!("k={k} outside 1..={num_classes}")));
    }
    let mut hits = 0usize;
    for (p, &truth) in probs.iter().zip(truths) {
        if p.len() != num_classes {
            return Err(CoreError::Evaluation("ragged probability vectors".into()));
        }
        if truth >= num_classes {
            return Err(CoreError::Evaluation(format!("label {truth} out of range")));
        }
        let mut order: Vec<usize> = (0..num_classes).collect();
        order.sort_by(|&a, &b| {
            p.values()[b].partial_cmp(&p.values()[a]).unwrap().then(a.cmp(&b))
        });
        if order[..k].contains(&truth) {
            hits += 1;
        }
    }
    Ok(hits as f64 / probs.len() as f64)
}

/// One prediction for a whole photo: argmax of the mean probability vector
/// over its crops, ties to the lowest class index.
pub fn aggregate_photo_vote(vectors: &[ProbabilityVector]) -> Result<usize> {
    Ok(aggregate_probabilities(vectors)?.argmax())
}

/// Count matrix indexed `[truth][prediction]`.
pub fn confusion_matrix(preds: &[usize], truths: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    check_paired(preds.len(), truths.len())?;
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(CoreError::Evaluation(format!(
                "label pair ({t}, {p}) out of range for {num_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-decade exact-match accuracy and sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecadeStat {
    pub accuracy: f64,
    pub count: usize,
}

/// Exact-match accuracy binned by the truth's decade (1930s..1990s).
pub fn per_decade_accuracy(pred_years: &[i32], true_years: &[i32]) -> Result<BTreeMap<i32, DecadeStat>> {
    check_paired(pred_years.len(), true_years.len())?;
    let mut hits: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for (&p, &t) in pred_years.iter().zip(true_years) {
        if !(DATING_YEAR_MIN..=DATING_YEAR_MAX).contains(&t) {
            return Err(CoreError::Evaluation(format!(
                "year {t} outside the dating range {DATING_YEAR_MIN}..={DATING_YEAR_MAX}"
            )));
        }
        let decade = (t / 10) * 10;
        let entry = hits.entry(decade).or_insert((0, 0));
        entry.1 += 1;
        if p == t {
            entry.0 += 1;
        }
    }
    Ok(hits
        .into_iter()
        .map(|(decade, (correct, count))| {
            (decade, DecadeStat { accuracy: correct as f64 / count as f64, count })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn five_year_tolerance_accepts_1927_for_1932() {
        assert_eq!(time_distance_accuracy(&[1927], &[1932], 5).unwrap(), 1.0);
        assert_eq!(time_distance_accuracy(&[1927], &[1932], 0).unwrap(), 0.0);
        assert_eq!(time_distance_accuracy(&[1927], &[1932], 10).unwrap(), 1.0);
    }

    #[test]
    fn exact_predictions_hit_any_distance() {
        let years = [1950, 1960, 1999];
        for d in [0, 5, 10] {
            assert_eq!(time_distance_accuracy(&years, &years, d).unwrap(), 1.0);
        }
    }

    #[test]
    fn mean_error_population_std() {
        assert_eq!(mean_abs_error(&[1950], &[1950]).unwrap(), (0.0, 0.0));
        // Errors {0, 10}: mean 5, population std 5.
        assert_eq!(mean_abs_error(&[1950, 1950], &[1950, 1960]).unwrap(), (5.0, 5.0));
        assert_eq!(mean_abs_error(&[1950], &[1953]).unwrap(), (3.0, 0.0));
    }

    #[test]
    fn topk_ranks_and_ties() {
        let probs = [pv(&[0.5, 0.3, 0.2])];
        assert_eq!(topk_accuracy(&probs, &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&probs, &[1], 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&probs, &[1], 3).unwrap(), 1.0);
        // Tie at the top: index 0 outranks index 1.
        let tied = [pv(&[0.4, 0.4, 0.2])];
        assert_eq!(topk_accuracy(&tied, &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&tied, &[0], 1).unwrap(), 1.0);
        assert!(topk_accuracy(&probs, &[1], 0).is_err());
        assert!(topk_accuracy(&probs, &[1], 4).is_err());
    }

    #[test]
    fn k_equals_class_count_is_always_perfect() {
        let probs = [pv(&[0.1, 0.2, 0.7]), pv(&[0.6, 0.3, 0.1])];
        assert_eq!(topk_accuracy(&probs, &[0, 2], 3).unwrap(), 1.0);
    }

    #[test]
    fn vote_aggregation_hand_case() {
        let vote = aggregate_photo_vote(&[pv(&[0.6, 0.4]), pv(&[0.2, 0.8])]).unwrap();
        // Mean is [0.4, 0.6].
        assert_eq!(vote, 1);
        assert_eq!(aggregate_photo_vote(&[pv(&[0.9, 0.1])]).unwrap(), 0);
        assert!(aggregate_photo_vote(&[]).is_err());
    }

    #[test]
    fn vote_is_permutation_invariant() {
        let a = pv(&[0.5, 0.3, 0.2]);
        let b = pv(&[0.1, 0.8, 0.1]);
        let c = pv(&[0.3, 0.3, 0.4]);
        let v1 = aggregate_photo_vote(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let v2 = aggregate_photo_vote(&[c, b, a]).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn confusion_matrix_hand_case() {
        let m = confusion_matrix(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(m, vec![vec![1, 1], vec![0, 1]]);
        let total: u64 = m.iter().flatten().sum();
        assert_eq!(total, 3);
        assert!(confusion_matrix(&[2], &[0], 2).is_err());
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [0usize, 1, 2, 1, 0];
        let m = confusion_matrix(&labels, &labels, 3).unwrap();
        for (t, row) in m.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                if t == p {
                    assert!(v > 0 || !labels.contains(&t));
                } else {
                    assert_eq!(v, 0);
                }
            }
        }
    }

    #[test]
    fn decade_bins_hand_case() {
        let truths = [1935, 1936, 1947, 1955, 1955, 1999];
        let preds = [1935, 1999, 1947, 1955, 1956, 1999];
        let bins = per_decade_accuracy(&preds, &truths).unwrap();
        assert_eq!(bins[&1930], DecadeStat { accuracy: 0.5, count: 2 });
        assert_eq!(bins[&1940], DecadeStat { accuracy: 1.0, count: 1 });
        assert_eq!(bins[&1950], DecadeStat { accuracy: 0.5, count: 2 });
        assert_eq!(bins[&1990], DecadeStat { accuracy: 1.0, count: 1 });
        assert!(bins.get(&1960).is_none());
        let total: usize = bins.values().map(|s| s.count).sum();
        assert_eq!(total, truths.len());
    }

    #[test]
    fn out_of_range_year_is_an_error() {
        assert!(per_decade_accuracy(&[1930], &[1929]).is_err());
        assert!(per_decade_accuracy(&[1930], &[2000]).is_err());
    }
}
