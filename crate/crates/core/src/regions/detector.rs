//! Detector port and its two adapters.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::{DetectionBox, RegionKind};

/// Suffix of the sidecar file holding stub detections for an image:
/// `photo.png` → `photo.detections.json`.
pub const SIDECAR_SUFFIX: &str = "detections.json";

/// Interface every detector adapter implements.
///
/// Adapters return raw candidate boxes; validation, confidence filtering and
/// sorting happen in [`detect`].
pub trait DetectorPort: Send + Sync {
    fn detect_raw(&self, photo_id: &str, image_path: &Path, kind: RegionKind) -> Result<Vec<DetectionBox>>;

    /// Short name recorded in the crop index for auditability.
    fn name(&self) -> &str;
}

/// Post-detection options.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectOptions {
    /// Boxes with confidence strictly below this are removed.
    pub confidence_floor: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions { confidence_floor: 0.25 }
    }
}

/// Run a detector on one photo and normalize the output: boxes validated
/// against the image plane, filtered by the confidence floor and sorted by
/// descending confidence.
pub fn detect(
    detector: &dyn DetectorPort,
    photo_id: &str,
    image_path: &Path,
    image_dims: (u32, u32),
    kind: RegionKind,
    opts: &DetectOptions,
) -> Result<Vec<DetectionBox>> {
    let (iw, ih) = image_dims;
    let raw = detector.detect_raw(photo_id, image_path, kind).map_err(|e| CoreError::Detector {
        photo_id: photo_id.to_string(),
        message: e.to_string(),
    })?;
    let mut boxes = Vec::with_capacity(raw.len());
    for b in raw {
        if b.kind != kind {
            continue;
        }
        b.validate(iw, ih).map_err(|e| CoreError::Detector {
            photo_id: photo_id.to_string(),
            message: e.to_string(),
        })?;
        if b.confidence >= opts.confidence_floor {
            boxes.push(b);
        }
    }
    boxes.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
    Ok(boxes)
}

/// Sidecar entry as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarEntry {
    kind: RegionKind,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    confidence: f64,
}

/// Deterministic stub adapter: detections come from a JSON sidecar file next
/// to each image. Photos without a sidecar have no detections.
#[derive(Debug, Default, Clone)]
pub struct SidecarDetector;

impl SidecarDetector {
    pub fn sidecar_path(image_path: &Path) -> PathBuf {
        image_path.with_extension(SIDECAR_SUFFIX)
    }

    /// Write a sidecar file for `image_path` (used by the synthetic
    /// generator and tests).
    pub fn write_sidecar(image_path: &Path, boxes: &[DetectionBox]) -> Result<()> {
        let entries: Vec<SidecarEntry> = boxes
            .iter()
            .map(|b| SidecarEntry { kind: b.kind, x: b.x, y: b.y, w: b.w, h: b.h, confidence: b.confidence })
            .collect();
        let path = Self::sidecar_path(image_path);
        let json = serde_json::to_string_pretty(&entries)?;
        std::fs::write(&path, json).map_err(|e| CoreError::io(&path, e))
    }
}

impl DetectorPort for SidecarDetector {
    fn detect_raw(&self, _photo_id: &str, image_path: &Path, kind: RegionKind) -> Result<Vec<DetectionBox>> {
        let path = Self::sidecar_path(image_path);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        let entries: Vec<SidecarEntry> = serde_json::from_str(&text)?;
        Ok(entries
            .into_iter()
            .filter(|e| e.kind == kind)
            .map(|e| DetectionBox { x: e.x, y: e.y, w: e.w, h: e.h, confidence: e.confidence, kind: e.kind })
            .collect())
    }

    fn name(&self) -> &str {
        "sidecar-stub"
    }
}

/// Adapter for an external pretrained detector.
///
/// Invokes `program [args...] <image_path> <kind>` and expects the sidecar
/// JSON format on stdout. This keeps the large pretrained face/person models
/// out of this crate while using the same wire format as the stub.
#[derive(Debug, Clone)]
pub struct CommandDetector {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CommandDetector {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        CommandDetector { program: program.into(), args: Vec::new() }
    }
}

impl DetectorPort for CommandDetector {
    fn detect_raw(&self, photo_id: &str, image_path: &Path, kind: RegionKind) -> Result<Vec<DetectionBox>> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(image_path)
            .arg(kind.as_str())
            .output()
            .map_err(|e| CoreError::Detector {
                photo_id: photo_id.to_string(),
                message: format!("failed to run {:?}: {e}", self.program),
            })?;
        if !output.status.success() {
            return Err(CoreError::Detector {
                photo_id: photo_id.to_string(),
                message: format!(
                    "{:?} exited with {}: {}",
                    self.program,
                    output.status,
                    String::from_utf8_lossy(&output.stderr)
                ),
            });
        }
        let entries: Vec<SidecarEntry> = serde_json::from_slice(&output.stdout)?;
        Ok(entries
            .into_iter()
            .filter(|e| e.kind == kind)
            .map(|e| DetectionBox { x: e.x, y: e.y, w: e.w, h: e.h, confidence: e.confidence, kind: e.kind })
            .collect())
    }

    fn name(&self) -> &str {
        "external-command"
    }
}
