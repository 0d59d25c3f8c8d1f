//! Property tests for the structural invariants: split partitioning and
//! leakage safety, crop expansion geometry, aggregation symmetry and the
//! probability simplex.

use std::path::PathBuf;

use proptest::prelude::*;

use chronolens_core::catalog::{
    derive_region_split, make_splits, Catalog, ContextClass, DatingLabelMap, PhotoRecord, Split,
};
use chronolens_core::models::{
    aggregate_probabilities, ensemble_predict, BranchFlags, ProbabilityVector,
};
use chronolens_core::regions::{expand_box, expansion_factor, DetectionBox, RegionKind};

fn record(i: usize) -> PhotoRecord {
    PhotoRecord {
        photo_id: format!("p{i:05}"),
        image_ref: PathBuf::from(format!("p{i:05}.png")),
        year: 1930 + (i % 70) as i32,
        context: ContextClass::ALL[i % 9],
        description: String::new(),
        city: String::new(),
        nation: String::new(),
        split: Split::Unassigned,
    }
}

fn catalog(n: usize) -> Catalog {
    Catalog::new((0..n).map(record).collect()).unwrap()
}

fn simplex(len: usize, raw: &[f64]) -> ProbabilityVector {
    let slice = &raw[..len];
    let sum: f64 = slice.iter().map(|v| v.abs() + 1e-3).sum();
    ProbabilityVector::new(slice.iter().map(|v| (v.abs() + 1e-3) / sum).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partition_is_exhaustive_and_disjoint(n in 5usize..240, seed in 0u64..1000) {
        let c = catalog(n);
        let a = make_splits(&c, seed).unwrap();
        prop_assert_eq!(a.assignments.len(), n);
        let (mut tr, mut va, mut te) = (0, 0, 0);
        for r in c.records() {
            match a.split_of(&r.photo_id).unwrap() {
                Split::Train => tr += 1,
                Split::Val => va += 1,
                Split::Test => te += 1,
                Split::Unassigned => prop_assert!(false, "unassigned id"),
            }
        }
        prop_assert_eq!(tr + va + te, n);
        // Largest-remainder rounding always lands within one of the quota.
        prop_assert!((tr as f64 - 0.72 * n as f64).abs() <= 1.0);
        prop_assert!((va as f64 - 0.08 * n as f64).abs() <= 1.0);
        prop_assert!((te as f64 - 0.20 * n as f64).abs() <= 1.0);
    }

    #[test]
    fn derived_crops_never_change_split(n in 5usize..80, seed in 0u64..100, picks in prop::collection::vec(0usize..80, 1..40)) {
        let c = catalog(n);
        let a = make_splits(&c, seed).unwrap();
        for pick in picks {
            let parent = &c.records()[pick % n];
            let split = derive_region_split(&a, &parent.photo_id).unwrap();
            prop_assert_eq!(split, a.split_of(&parent.photo_id).unwrap());
        }
        prop_assert!(derive_region_split(&a, "missing-id").is_err());
    }

    #[test]
    fn expansion_factor_monotone(n in 1u32..60) {
        prop_assert!(expansion_factor(n + 1).unwrap() <= expansion_factor(n).unwrap());
        let f = expansion_factor(n).unwrap();
        prop_assert!((1.1..=1.6).contains(&f));
    }

    #[test]
    fn expanded_box_contains_raw_and_stays_inside(
        x in -30.0f64..400.0,
        y in -30.0f64..400.0,
        w in 1.0f64..120.0,
        h in 1.0f64..120.0,
        n in 1u32..20,
        is_face in any::<bool>(),
    ) {
        let kind = if is_face { RegionKind::Face } else { RegionKind::Person };
        let raw = DetectionBox { x, y, w, h, confidence: 0.9, kind };
        let (iw, ih) = (384u32, 384u32);
        if raw.validate(iw, ih).is_err() {
            return Ok(());
        }
        let rect = expand_box(&raw, n, iw, ih).unwrap();
        // Inside the image plane.
        prop_assert!(rect.x + rect.w <= iw && rect.y + rect.h <= ih);
        // Contains the raw box clipped to the image.
        let rx0 = x.max(0.0).floor() as u32;
        let ry0 = y.max(0.0).floor() as u32;
        let rx1 = (x + w).min(iw as f64).ceil() as u32;
        let ry1 = (y + h).min(ih as f64).ceil() as u32;
        if rx1 > rx0 && ry1 > ry0 {
            prop_assert!(rect.x <= rx0 && rect.y <= ry0, "origin {rect:?} vs raw ({rx0},{ry0})");
            prop_assert!(rect.x + rect.w >= rx1 && rect.y + rect.h >= ry1);
        }
        // Center preserved when no clipping occurred.
        let unclipped = rect.x > 0
            && rect.y > 0
            && rect.x + rect.w < iw
            && rect.y + rect.h < ih;
        if unclipped {
            let (cx, cy) = raw.center();
            let (ex, ey) = rect.center();
            prop_assert!((cx - ex).abs() <= 1.0 && (cy - ey).abs() <= 1.0);
        }
    }

    #[test]
    fn aggregation_is_permutation_invariant_and_on_simplex(
        raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..8),
        rot in 0usize..8,
    ) {
        let vectors: Vec<ProbabilityVector> = raw.iter().map(|r| simplex(6, r)).collect();
        let mut rotated = vectors.clone();
        rotated.rotate_left(rot % vectors.len().max(1));
        let a = aggregate_probabilities(&vectors).unwrap();
        let b = aggregate_probabilities(&rotated).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let sum: f64 = a.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ensemble_output_is_on_simplex_and_drops_missing(
        photo_raw in prop::collection::vec(-5.0f64..5.0, 6),
        faces_raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 0..4),
        people_raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 0..4),
    ) {
        let photo = simplex(6, &photo_raw);
        let faces: Vec<ProbabilityVector> = faces_raw.iter().map(|r| simplex(6, r)).collect();
        let people: Vec<ProbabilityVector> = people_raw.iter().map(|r| simplex(6, r)).collect();
        let out = ensemble_predict(Some(&photo), &faces, &people, BranchFlags::ALL).unwrap();
        let sum: f64 = out.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);

        // With only the image included, the output is the image vector.
        let only_image = ensemble_predict(Some(&photo), &faces, &people, BranchFlags::only_image()).unwrap();
        for (x, y) in only_image.values().iter().zip(photo.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dating_label_map_round_trips(idx in 0usize..70) {
        let map = DatingLabelMap::default();
        let year = map.year_of(idx).unwrap();
        prop_assert_eq!(map.index_of(year), Some(idx));
    }
}
