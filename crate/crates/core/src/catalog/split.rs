//! Leakage-safe train/val/test splits.
//!
//! The whole-image catalog is partitioned once; face and person crops always
//! inherit the split of their parent photo, so no derived sample of a
//! training photo can land in validation or test.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::{Catalog, Split};

/// Fractions of the total catalog. Test is 20% of all records; validation is
/// 10% of the remaining 80% training pool, i.e. 8% of the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.72, val: 0.08, test: 0.20 }
    }
}

/// A deterministic, exhaustive and disjoint partition of catalog photo ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub fractions: SplitFractions,
    /// BTreeMap keeps serialization byte-stable across runs.
    pub assignments: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, photo_id: &str) -> Option<Split> {
        self.assignments.get(photo_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|&&s| s == split).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SplitAssignment> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Integer subset sizes under largest-remainder rounding.
///
/// Quotas `n * f_i` are floored, then leftover slots go to the subsets with
/// the largest fractional remainders (ties favour the larger fraction, then
/// train before val before test).
pub fn largest_remainder_counts(n: usize, fractions: SplitFractions) -> [usize; 3] {
    let fs = [fractions.train, fractions.val, fractions.test];
    let quotas: Vec<f64> = fs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra)
            .unwrap()
            .then(fs[b].partial_cmp(&fs[a]).unwrap())
            .then(a.cmp(&b))
    });
    for i in 0..n.saturating_sub(assigned) {
        counts[order[i % 3]] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Randomly partition the catalog. Pure function of `(catalog, seed)`:
/// ids are sorted before shuffling so the manifest row order is irrelevant.
pub fn make_splits(catalog: &Catalog, seed: u64) -> Result<SplitAssignment> {
    if catalog.len() < 5 {
        return Err(CoreError::Catalog(format!(
            "catalog has {} records; at least 5 are needed to realize 72/8/20 fractions",
            catalog.len()
        )));
    }
    let fractions = SplitFractions::default();
    let mut ids: Vec<&str> = catalog.records().iter().map(|r| r.photo_id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let [n_train, n_val, _n_test] = largest_remainder_counts(ids.len(), fractions);
    let mut assignments = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        assignments.insert(id.to_string(), split);
    }
    Ok(SplitAssignment { seed, fractions, assignments })
}

/// The split of a derived crop is always its parent photo's split.
pub fn derive_region_split(assignment: &SplitAssignment, parent_id: &str) -> Result<Split> {
    assignment
        .split_of(parent_id)
        .ok_or_else(|| CoreError::UnknownParent(parent_id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ContextClass, PhotoRecord};
    use std::path::PathBuf;

    fn catalog(n: usize) -> Catalog {
        let records = (0..n)
            .map(|i| PhotoRecord {
                photo_id: format!("p{i:04}"),
                image_ref: PathBuf::from(format!("p{i:04}.png")),
                year: 1930 + (i % 70) as i32,
                context: ContextClass::ALL[i % 9],
                description: String::new(),
                city: String::new(),
                nation: String::new(),
                split: Split::Unassigned,
            })
            .collect();
        Catalog::new(records).unwrap()
    }

    #[test]
    fn hundred_records_split_72_8_20() {
        let a = make_splits(&catalog(100), 7).unwrap();
        assert_eq!(a.count(Split::Train), 72);
        assert_eq!(a.count(Split::Val), 8);
        assert_eq!(a.count(Split::Test), 20);
    }

    #[test]
    fn ten_records_split_7_1_2() {
        // Quotas 7.2 / 0.8 / 2.0: val has the largest remainder and takes
        // the one leftover slot.
        let a = make_splits(&catalog(10), 3).unwrap();
        assert_eq!(a.count(Split::Train), 7);
        assert_eq!(a.count(Split::Val), 1);
        assert_eq!(a.count(Split::Test), 2);
    }

    #[test]
    fn same_seed_reproduces_assignment_exactly() {
        let c = catalog(137);
        let a = make_splits(&c, 42).unwrap();
        let b = make_splits(&c, 42).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let other = make_splits(&c, 43).unwrap();
        assert_ne!(a.assignments, other.assignments);
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let c = catalog(97);
        let a = make_splits(&c, 11).unwrap();
        assert_eq!(a.assignments.len(), c.len());
        for r in c.records() {
            assert!(a.split_of(&r.photo_id).is_some());
        }
        let total = a.count(Split::Train) + a.count(Split::Val) + a.count(Split::Test);
        assert_eq!(total, c.len());
    }

    #[test]
    fn tiny_catalog_is_an_error() {
        assert!(make_splits(&catalog(4), 0).is_err());
    }

    #[test]
    fn derived_split_matches_parent() {
        let c = catalog(20);
        let a = make_splits(&c, 5).unwrap();
        for r in c.records() {
            let parent = a.split_of(&r.photo_id).unwrap();
            assert_eq!(derive_region_split(&a, &r.photo_id).unwrap(), parent);
        }
        assert!(derive_region_split(&a, "nope").is_err());
    }

    #[test]
    fn split_file_round_trips() {
        let c = catalog(25);
        let a = make_splits(&c, 9).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        a.save(f.path()).unwrap();
        let b = SplitAssignment::load(f.path()).unwrap();
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn counts_cover_awkward_sizes() {
        for n in 5..200 {
            let [tr, va, te] = largest_remainder_counts(n, SplitFractions::default());
            assert_eq!(tr + va + te, n, "n={n}");
        }
    }
}
