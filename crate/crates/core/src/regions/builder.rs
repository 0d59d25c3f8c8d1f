//! Batch construction of the face and person crop datasets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{CoreError, Result};
use crate::imageio;

use super::{adaptive_crop, detect, DetectOptions, DetectorPort, RegionCrop, RegionKind};

/// Options for a dataset build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildOptions {
    pub detect: DetectOptions,
    /// Root prepended to relative `image_ref` paths in the catalog.
    pub image_root: PathBuf,
    /// Directory crops are materialized under (`faces/`, `people/`).
    pub out_dir: PathBuf,
}

/// A photo that produced no detections of a given kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoRegionEntry {
    pub photo_id: String,
    pub kind: RegionKind,
}

/// A photo that failed detection or cropping. Failures are aggregated, they
/// never abort the batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotoFailure {
    pub photo_id: String,
    pub message: String,
}

/// The two derived datasets plus bookkeeping.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegionDatasets {
    pub faces: Vec<RegionCrop>,
    pub people: Vec<RegionCrop>,
    pub no_region: Vec<NoRegionEntry>,
    pub failures: Vec<PhotoFailure>,
}

impl RegionDatasets {
    pub fn crops(&self, kind: RegionKind) -> &[RegionCrop] {
        match kind {
            RegionKind::Face => &self.faces,
            RegionKind::Person => &self.people,
        }
    }
}

/// On-disk index of all materialized crops.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CropIndex {
    pub detector: String,
    pub options: DetectOptions,
    pub crops: Vec<RegionCrop>,
    pub no_region: Vec<NoRegionEntry>,
    pub failures: Vec<PhotoFailure>,
    /// Same-kind detection counts per photo: photo_id -> (faces, people).
    pub counts: BTreeMap<String, (u32, u32)>,
}

impl CropIndex {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<CropIndex> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn crops_of_kind(&self, kind: RegionKind) -> impl Iterator<Item = &RegionCrop> {
        self.crops.iter().filter(move |c| c.kind == kind)
    }
}

struct PhotoOutcome {
    photo_id: String,
    result: Result<(Vec<(RegionCrop, image::RgbImage)>, u32, u32)>,
}

/// Detect faces and people in every catalog photo and materialize the crops.
///
/// Detection and cropping run in parallel per photo; the crop index and crop
/// files are written by this single thread afterwards so the index stays
/// consistent.
pub fn build_region_datasets(
    catalog: &Catalog,
    detector: &dyn DetectorPort,
    opts: &BuildOptions,
) -> Result<(RegionDatasets, CropIndex)> {
    let faces_dir = opts.out_dir.join("faces");
    let people_dir = opts.out_dir.join("people");
    std::fs::create_dir_all(&faces_dir).map_err(|e| CoreError::io(&faces_dir, e))?;
    std::fs::create_dir_all(&people_dir).map_err(|e| CoreError::io(&people_dir, e))?;

    let outcomes: Vec<PhotoOutcome> = catalog
        .records()
        .par_iter()
        .map(|record| {
            let photo_id = record.photo_id.clone();
            let result = process_photo(record, detector, opts, &faces_dir, &people_dir);
            PhotoOutcome { photo_id, result }
        })
        .collect();

    let mut datasets = RegionDatasets::default();
    let mut counts = BTreeMap::new();
    for outcome in outcomes {
        match outcome.result {
            Ok((crops, n_faces, n_people)) => {
                if n_faces == 0 {
                    datasets
                        .no_region
                        .push(NoRegionEntry { photo_id: outcome.photo_id.clone(), kind: RegionKind::Face });
                }
                if n_people == 0 {
                    datasets
                        .no_region
                        .push(NoRegionEntry { photo_id: outcome.photo_id.clone(), kind: RegionKind::Person });
                }
                counts.insert(outcome.photo_id, (n_faces, n_people));
                for (crop, pixels) in crops {
                    imageio::save_png(&pixels, &crop.image_ref)?;
                    match crop.kind {
                        RegionKind::Face => datasets.faces.push(crop),
                        RegionKind::Person => datasets.people.push(crop),
                    }
                }
            }
            Err(e) => datasets
                .failures
                .push(PhotoFailure { photo_id: outcome.photo_id, message: e.to_string() }),
        }
    }

    let mut crops = Vec::with_capacity(datasets.faces.len() + datasets.people.len());
    crops.extend(datasets.faces.iter().cloned());
    crops.extend(datasets.people.iter().cloned());
    let index = CropIndex {
        detector: detector.name().to_string(),
        options: opts.detect,
        crops,
        no_region: datasets.no_region.clone(),
        failures: datasets.failures.clone(),
        counts,
    };
    Ok((datasets, index))
}

fn process_photo(
    record: &crate::catalog::PhotoRecord,
    detector: &dyn DetectorPort,
    opts: &BuildOptions,
    faces_dir: &Path,
    people_dir: &Path,
) -> Result<(Vec<(RegionCrop, image::RgbImage)>, u32, u32)> {
    let image_path = if record.image_ref.is_absolute() {
        record.image_ref.clone()
    } else {
        opts.image_root.join(&record.image_ref)
    };
    let image = imageio::load_rgb(&image_path)?;
    let dims = (image.width(), image.height());

    let mut out = Vec::new();
    let mut n_by_kind = [0u32; 2];
    for (ki, kind) in [RegionKind::Face, RegionKind::Person].into_iter().enumerate() {
        let boxes = detect(detector, &record.photo_id, &image_path, dims, kind, &opts.detect)?;
        let n = boxes.len() as u32;
        n_by_kind[ki] = n;
        let dir = match kind {
            RegionKind::Face => faces_dir,
            RegionKind::Person => people_dir,
        };
        for (i, b) in boxes.iter().enumerate() {
            let crop_id = format!("{}_{}_{i}", record.photo_id, kind.as_str());
            let path = dir.join(format!("{crop_id}.png"));
            let (crop, pixels) = adaptive_crop(&image, &record.photo_id, crop_id, b, n, path)?;
            out.push((crop, pixels));
        }
    }
    Ok((out, n_by_kind[0], n_by_kind[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, ContextClass, PhotoRecord, Split};
    use crate::regions::{DetectionBox, SidecarDetector};
    use image::{Rgb, RgbImage};

    fn synth_photo(dir: &Path, id: &str, faces: usize, people: usize) -> PhotoRecord {
        let path = dir.join(format!("{id}.png"));
        let img = RgbImage::from_pixel(96, 96, Rgb([100, 100, 100]));
        img.save(&path).unwrap();
        let mut boxes = Vec::new();
        for i in 0..faces {
            boxes.push(DetectionBox {
                x: 10.0 + 20.0 * i as f64,
                y: 10.0,
                w: 12.0,
                h: 12.0,
                confidence: 0.9,
                kind: RegionKind::Face,
            });
        }
        for i in 0..people {
            boxes.push(DetectionBox {
                x: 10.0 + 20.0 * i as f64,
                y: 30.0,
                w: 14.0,
                h: 40.0,
                confidence: 0.8,
                kind: RegionKind::Person,
            });
        }
        SidecarDetector::write_sidecar(&path, &boxes).unwrap();
        PhotoRecord {
            photo_id: id.to_string(),
            image_ref: PathBuf::from(format!("{id}.png")),
            year: 1950,
            context: ContextClass::Work,
            description: String::new(),
            city: String::new(),
            nation: String::new(),
            split: Split::Unassigned,
        }
    }

    #[test]
    fn builds_both_datasets_with_counts() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            synth_photo(dir.path(), "a", 2, 1),
            synth_photo(dir.path(), "b", 2, 1),
        ];
        let catalog = Catalog::new(records).unwrap();
        let opts = BuildOptions {
            detect: DetectOptions::default(),
            image_root: dir.path().to_path_buf(),
            out_dir: dir.path().join("crops"),
        };
        let (ds, index) = build_region_datasets(&catalog, &SidecarDetector, &opts).unwrap();
        assert_eq!(ds.faces.len(), 4);
        assert_eq!(ds.people.len(), 2);
        assert!(ds.failures.is_empty());
        assert_eq!(index.counts["a"], (2, 1));
        assert_eq!(index.counts["b"], (2, 1));
        for crop in &ds.faces {
            assert!(crop.image_ref.exists());
            assert_eq!(crop.n_in_photo, 2);
        }
        for crop in &ds.people {
            assert_eq!(crop.n_in_photo, 1);
        }
    }

    #[test]
    fn zero_detection_photo_lands_in_no_region_report() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![synth_photo(dir.path(), "empty", 0, 0)];
        let catalog = Catalog::new(records).unwrap();
        let opts = BuildOptions {
            detect: DetectOptions::default(),
            image_root: dir.path().to_path_buf(),
            out_dir: dir.path().join("crops"),
        };
        let (ds, _) = build_region_datasets(&catalog, &SidecarDetector, &opts).unwrap();
        assert!(ds.faces.is_empty());
        assert!(ds.people.is_empty());
        assert_eq!(ds.no_region.len(), 2);
    }

    #[test]
    fn per_photo_failure_does_not_abort_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = vec![synth_photo(dir.path(), "good", 1, 1)];
        records.push(PhotoRecord {
            photo_id: "missing".to_string(),
            image_ref: PathBuf::from("missing.png"),
            year: 1950,
            context: ContextClass::Work,
            description: String::new(),
            city: String::new(),
            nation: String::new(),
            split: Split::Unassigned,
        });
        let catalog = Catalog::new(records).unwrap();
        let opts = BuildOptions {
            detect: DetectOptions::default(),
            image_root: dir.path().to_path_buf(),
            out_dir: dir.path().join("crops"),
        };
        let (ds, index) = build_region_datasets(&catalog, &SidecarDetector, &opts).unwrap();
        assert_eq!(ds.faces.len(), 1);
        assert_eq!(ds.failures.len(), 1);
        assert_eq!(ds.failures[0].photo_id, "missing");
        let f = tempfile::NamedTempFile::new().unwrap();
        index.save(f.path()).unwrap();
        let loaded = CropIndex::load(f.path()).unwrap();
        assert_eq!(loaded.crops.len(), 2);
    }
}
