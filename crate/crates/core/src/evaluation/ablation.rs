//! Fixed-count crop ablation: accuracy as a function of how many of a
//! photo's faces/people the ensemble may see, isolating the whole-image
//! contribution by running every variant with and without it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::{ensemble_predict, BranchFlags, ProbabilityVector};

/// How photos qualify for the fixed-count subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedCountMode {
    /// Exactly n faces AND exactly n people (the default reading).
    Conjunctive,
    /// Exactly n of either kind; cells then average over the photos that
    /// satisfy their own column's requirement.
    Disjunctive,
}

/// Photos qualifying for the ablation from per-photo detection counts.
pub fn select_fixed_n(
    counts: &BTreeMap<String, (u32, u32)>,
    eligible: impl Fn(&str) -> bool,
    n: u32,
    mode: FixedCountMode,
) -> Vec<String> {
    counts
        .iter()
        .filter(|(id, &(faces, people))| {
            eligible(id)
                && match mode {
                    FixedCountMode::Conjunctive => faces == n && people == n,
                    FixedCountMode::Disjunctive => faces == n || people == n,
                }
        })
        .map(|(id, _)| id.clone())
        .collect()
}

/// The six ensemble variants of the ablation, column order fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    FacesOnly,
    FacesWithImage,
    PeopleOnly,
    PeopleWithImage,
    BothOnly,
    BothWithImage,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::FacesOnly,
        AblationVariant::FacesWithImage,
        AblationVariant::PeopleOnly,
        AblationVariant::PeopleWithImage,
        AblationVariant::BothOnly,
        AblationVariant::BothWithImage,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::FacesOnly => "faces w/o image",
            AblationVariant::FacesWithImage => "faces w/ image",
            AblationVariant::PeopleOnly => "people w/o image",
            AblationVariant::PeopleWithImage => "people w/ image",
            AblationVariant::BothOnly => "both w/o image",
            AblationVariant::BothWithImage => "both w/ image",
        }
    }

    fn uses_faces(self) -> bool {
        !matches!(self, AblationVariant::PeopleOnly | AblationVariant::PeopleWithImage)
    }

    fn uses_people(self) -> bool {
        !matches!(self, AblationVariant::FacesOnly | AblationVariant::FacesWithImage)
    }

    fn uses_image(self) -> bool {
        matches!(
            self,
            AblationVariant::FacesWithImage
                | AblationVariant::PeopleWithImage
                | AblationVariant::BothWithImage
        )
    }
}

/// One test photo's scores for the ablation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationPhoto {
    pub photo_id: String,
    pub true_class: usize,
    pub image: ProbabilityVector,
    pub faces: Vec<ProbabilityVector>,
    pub people: Vec<ProbabilityVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    /// Accuracy per variant, in [`AblationVariant::ALL`] order.
    pub cells: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub n: usize,
    /// C(n, k) for k = 1..=n.
    pub subset_counts: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// Photos qualifying per variant column.
    pub photos_per_variant: [usize; 6],
}

/// All k-subsets of 0..n in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // Advance the rightmost index that can still move.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn pick<'a>(vectors: &'a [ProbabilityVector], subset: &[usize]) -> Vec<ProbabilityVector> {
    subset.iter().map(|&i| vectors[i].clone()).collect()
}

/// Accuracy (exact class match) for every k in 1..=n and all six variants,
/// averaged over all C(n, k) index subsets per photo.
///
/// For the two-kind variants the same index subset selects both the k faces
/// and the k people of a photo, which keeps every cell an average over
/// exactly C(n, k) ensemble evaluations.
pub fn kofn_ablation(photos: &[AblationPhoto], n: usize) -> Result<AblationTable> {
    if photos.is_empty() {
        return Err(CoreError::Evaluation("ablation subset is empty".into()));
    }
    if n == 0 {
        return Err(CoreError::Evaluation("ablation needs n >= 1".into()));
    }

    let mut photos_per_variant = [0usize; 6];
    for (vi, variant) in AblationVariant::ALL.iter().enumerate() {
        photos_per_variant[vi] = photos
            .iter()
            .filter(|p| {
                (!variant.uses_faces() || p.faces.len() == n)
                    && (!variant.uses_people() || p.people.len() == n)
            })
            .count();
        if photos_per_variant[vi] == 0 {
            return Err(CoreError::Evaluation(format!(
                "no photo qualifies for variant {:?}: need exactly {n} crops of each used kind",
                variant.label()
            )));
        }
    }

    let mut rows = Vec::with_capacity(n);
    for k in 1..=n {
        let subsets = combinations(n, k);
        let mut cells = [0.0f64; 6];
        for (vi, variant) in AblationVariant::ALL.iter().enumerate() {
            let mut hits = 0u64;
            let mut total = 0u64;
            for photo in photos {
                if variant.uses_faces() && photo.faces.len() != n {
                    continue;
                }
                if variant.uses_people() && photo.people.len() != n {
                    continue;
                }
                for subset in &subsets {
                    let faces = if variant.uses_faces() { pick(&photo.faces, subset) } else { Vec::new() };
                    let people =
                        if variant.uses_people() { pick(&photo.people, subset) } else { Vec::new() };
                    let include = BranchFlags {
                        image: variant.uses_image(),
                        faces: variant.uses_faces(),
                        people: variant.uses_people(),
                    };
                    let prediction = ensemble_predict(
                        variant.uses_image().then_some(&photo.image),
                        &faces,
                        &people,
                        include,
                    )?;
                    total += 1;
                    if prediction.argmax() == photo.true_class {
                        hits += 1;
                    }
                }
            }
            cells[vi] = hits as f64 / total as f64;
        }
        rows.push(AblationRow { k, cells });
    }

    Ok(AblationTable {
        n,
        subset_counts: (1..=n as u64).map(|k| binomial(n as u64, k)).collect(),
        rows,
        photos_per_variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn binomial_counts_for_n8() {
        let counts: Vec<u64> = (1..=8).map(|k| binomial(8, k)).collect();
        assert_eq!(counts, vec![8, 28, 56, 70, 56, 28, 8, 1]);
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        assert_eq!(combinations(4, 2), vec![
            vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]
        ]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(combinations(5, 1).len(), 5);
        assert!(combinations(3, 4).is_empty());
    }

    #[test]
    fn subset_counts_match_enumeration_lengths() {
        for n in 1..=8usize {
            for k in 1..=n {
                assert_eq!(combinations(n, k).len() as u64, binomial(n as u64, k as u64));
            }
        }
    }

    #[test]
    fn k_equals_n_with_everything_matches_full_ensemble() {
        let photo = AblationPhoto {
            photo_id: "p".into(),
            true_class: 1,
            image: pv(&[0.2, 0.8]),
            faces: vec![pv(&[0.5, 0.5]), pv(&[0.1, 0.9])],
            people: vec![pv(&[0.6, 0.4]), pv(&[0.3, 0.7])],
        };
        let table = kofn_ablation(&[photo.clone()], 2).unwrap();
        let full = ensemble_predict(
            Some(&photo.image),
            &photo.faces,
            &photo.people,
            BranchFlags::ALL,
        )
        .unwrap();
        let expect = if full.argmax() == photo.true_class { 1.0 } else { 0.0 };
        let last = table.rows.last().unwrap();
        assert_eq!(last.k, 2);
        assert_eq!(last.cells[5], expect); // both w/ image
    }

    #[test]
    fn empty_subset_aborts_with_message() {
        assert!(kofn_ablation(&[], 3).is_err());
        // Photo with wrong crop count for every variant.
        let photo = AblationPhoto {
            photo_id: "p".into(),
            true_class: 0,
            image: pv(&[1.0, 0.0]),
            faces: vec![pv(&[1.0, 0.0])],
            people: vec![pv(&[1.0, 0.0])],
        };
        let err = kofn_ablation(&[photo], 3).unwrap_err().to_string();
        assert!(err.contains("exactly 3"), "{err}");
    }

    #[test]
    fn select_fixed_n_modes() {
        let mut counts = BTreeMap::new();
        counts.insert("a".to_string(), (8u32, 8u32));
        counts.insert("b".to_string(), (8, 7));
        counts.insert("c".to_string(), (2, 8));
        counts.insert("d".to_string(), (1, 1));
        let all = |_: &str| true;
        let conj = select_fixed_n(&counts, all, 8, FixedCountMode::Conjunctive);
        assert_eq!(conj, vec!["a"]);
        let disj = select_fixed_n(&counts, all, 8, FixedCountMode::Disjunctive);
        assert_eq!(disj, vec!["a", "b", "c"]);
        let gated = select_fixed_n(&counts, |id| id != "a", 8, FixedCountMode::Conjunctive);
        assert!(gated.is_empty());
    }
}
