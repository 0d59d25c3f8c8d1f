//! Face and person region extraction.
//!
//! Detection is behind a port so the heavy pretrained detectors stay external
//! to this crate: production runs use the command adapter, tests and the
//! bundled synthetic data use the deterministic sidecar stub. Crops are
//! expanded adaptively (the more same-kind detections in a photo, the smaller
//! the expansion) and materialized to disk exactly once.

mod builder;
mod crop;
mod detector;

pub use builder::{build_region_datasets, BuildOptions, CropIndex, NoRegionEntry, PhotoFailure, RegionDatasets};
pub use crop::{adaptive_crop, expand_box, expansion_factor, PixelRect, RegionCrop, E_MAX, E_MIN, N_REF};
pub use detector::{detect, CommandDetector, DetectOptions, DetectorPort, SidecarDetector, SIDECAR_SUFFIX};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Kind of region a detector produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Face,
    Person,
}

impl RegionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::Face => "face",
            RegionKind::Person => "person",
        }
    }
}

impl std::fmt::Display for RegionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One detection in parent-image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub kind: RegionKind,
}

impl DetectionBox {
    /// Validate against the parent image plane. The box must have positive
    /// extent, confidence in [0,1], and intersect the image.
    pub fn validate(&self, image_w: u32, image_h: u32) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "detection box must have positive extent (w={}, h={})",
                self.w, self.h
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(CoreError::InvalidArgument(format!(
                "detection confidence {} outside [0,1]",
                self.confidence
            )));
        }
        let intersects = self.x < image_w as f64
            && self.y < image_h as f64
            && self.x + self.w > 0.0
            && self.y + self.h > 0.0;
        if !intersects {
            return Err(CoreError::InvalidArgument(format!(
                "detection box ({}, {}, {}, {}) does not intersect a {}x{} image",
                self.x, self.y, self.w, self.h, image_w, image_h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}
