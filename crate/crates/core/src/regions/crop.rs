//! Adaptive crop expansion.
//!
//! A detected face box is tight around the face; expanding it captures the
//! full head and shoulders. A fixed expansion either loses detail on lone
//! subjects or bleeds neighbouring faces into crowded photos, so the factor
//! shrinks with the number of same-kind detections in the photo.

use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::{DetectionBox, RegionKind};

/// Expansion factor for a single detection.
pub const E_MAX: f64 = 1.6;
/// Expansion factor once a photo holds [`N_REF`] or more detections.
pub const E_MIN: f64 = 1.1;
/// Detection count at which the factor bottoms out.
pub const N_REF: u32 = 10;

/// Linear schedule from `E_MAX` at n=1 down to `E_MIN` at n>=N_REF.
pub fn expansion_factor(n: u32) -> Result<f64> {
    if n < 1 {
        return Err(CoreError::InvalidArgument("detection count must be >= 1".into()));
    }
    if n >= N_REF {
        return Ok(E_MIN);
    }
    let t = (n - 1) as f64 / (N_REF - 1) as f64;
    Ok(E_MAX - (E_MAX - E_MIN) * t)
}

/// Integer rectangle in parent-image coordinates, clipped to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.w <= self.x + self.w
            && other.y + other.h <= self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }
}

/// A materialized face or person crop tied to its parent photo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionCrop {
    pub crop_id: String,
    pub parent_id: String,
    pub kind: RegionKind,
    pub raw_box: DetectionBox,
    pub expanded_box: PixelRect,
    /// Count of same-kind detections in the parent photo.
    pub n_in_photo: u32,
    /// Path of the materialized crop image.
    pub image_ref: PathBuf,
}

/// Expand a detection about its center and clip to the image.
///
/// Faces grow to a square of side `factor * max(w, h)` so the crop covers
/// the full head and shoulders; person boxes keep their aspect ratio since
/// full figures may be standing or sitting.
pub fn expand_box(
    raw: &DetectionBox,
    n_same_kind: u32,
    image_w: u32,
    image_h: u32,
) -> Result<PixelRect> {
    let factor = expansion_factor(n_same_kind)?;
    let (cx, cy) = raw.center();
    let (ew, eh) = match raw.kind {
        RegionKind::Face => {
            let side = factor * raw.w.max(raw.h);
            (side, side)
        }
        RegionKind::Person => (factor * raw.w, factor * raw.h),
    };
    // Floor the origin and ceil the extent so no detected pixel is lost.
    let x0 = (cx - ew / 2.0).floor().max(0.0) as u32;
    let y0 = (cy - eh / 2.0).floor().max(0.0) as u32;
    let x1 = (cx + ew / 2.0).ceil().min(image_w as f64) as u32;
    let y1 = (cy + eh / 2.0).ceil().min(image_h as f64) as u32;
    if x1 <= x0 || y1 <= y0 {
        return Err(CoreError::InvalidArgument(format!(
            "expanded box degenerates to zero area after clipping to {image_w}x{image_h}"
        )));
    }
    Ok(PixelRect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
}

/// Expand, crop the parent image and build the [`RegionCrop`] record.
/// The crop image is returned for the caller to persist.
pub fn adaptive_crop(
    image: &RgbImage,
    parent_id: &str,
    crop_id: String,
    raw: &DetectionBox,
    n_same_kind: u32,
    image_ref: PathBuf,
) -> Result<(RegionCrop, RgbImage)> {
    let rect = expand_box(raw, n_same_kind, image.width(), image.height())?;
    let view = image::imageops::crop_imm(image, rect.x, rect.y, rect.w, rect.h).to_image();
    let crop = RegionCrop {
        crop_id,
        parent_id: parent_id.to_string(),
        kind: raw.kind,
        raw_box: raw.clone(),
        expanded_box: rect,
        n_in_photo: n_same_kind,
        image_ref,
    };
    Ok((crop, view))
}
