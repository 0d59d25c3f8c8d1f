//! Bundled synthetic dataset generator.
//!
//! The real archive is private, so the repository ships a generator whose
//! images carry known, learnable signals: the shooting "year" is encoded by
//! the width of a central vertical bar (widths spaced so random-crop
//! augmentation cannot confuse neighbours), the context class by a small
//! corner glyph, and each drawn face/person region encodes the year in its
//! brightness. Detections are written as stub sidecar files, making the full
//! pipeline runnable and checkable end to end without any private data.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ContextClass;
use crate::error::{CoreError, Result};
use crate::regions::{DetectionBox, RegionKind, SidecarDetector};

/// Bar widths per year index at the 48px canvas: consecutive ratios stay
/// above the worst-case random-crop rescale (~1.12), so the year signal
/// survives augmentation.
pub const YEAR_BAR_WIDTHS: [u32; 10] = [2, 3, 4, 5, 6, 8, 10, 13, 17, 22];

/// Default synthetic years: one per decade-ish, spread over the dating range.
pub const DEFAULT_YEARS: [i32; 10] = [1935, 1942, 1949, 1956, 1963, 1970, 1977, 1984, 1991, 1998];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub photos: usize,
    pub seed: u64,
    pub image_size: u32,
    pub years: Vec<i32>,
    /// Uniformly 1..=max of each kind per photo, unless fixed below.
    pub max_regions: u32,
    /// Draw exactly this many faces and people per photo (for the
    /// fixed-count ablation).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_regions: Option<u32>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            photos: 1200,
            seed: 7,
            image_size: 48,
            years: DEFAULT_YEARS.to_vec(),
            max_regions: 2,
            fixed_regions: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub photos: usize,
    pub manifest: PathBuf,
    pub image_dir: PathBuf,
    pub years: Vec<i32>,
}

fn put_clamped(img: &mut RgbImage, x: i64, y: i64, v: u8) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb([v, v, v]));
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, v: u8) {
    for yy in y..y + h {
        for xx in x..x + w {
            put_clamped(img, xx, yy, v);
        }
    }
}

/// Draw the 10x10 glyph for a context class with its top-left at (x, y).
/// Patterns stay distinct under horizontal mirroring, which training-time
/// flips will apply.
fn draw_glyph(img: &mut RgbImage, class: ContextClass, x: i64, y: i64) {
    const S: i64 = 10;
    let v = 255u8;
    match class {
        ContextClass::Work => fill_rect(img, x, y, S, S, v),
        ContextClass::FreeTime => {
            fill_rect(img, x, y, S, 2, v);
            fill_rect(img, x, y + S - 2, S, 2, v);
            fill_rect(img, x, y, 2, S, v);
            fill_rect(img, x + S - 2, y, 2, S, v);
        }
        ContextClass::Motorization => {
            for i in 0..S {
                put_clamped(img, x + i, y + i, v);
                put_clamped(img, x + S - 1 - i, y + i, v);
            }
        }
        ContextClass::Music => {
            fill_rect(img, x + S / 2 - 1, y, 2, S, v);
            fill_rect(img, x, y + S / 2 - 1, S, 2, v);
        }
        ContextClass::Fashion => {
            for row in (0..S).step_by(3) {
                fill_rect(img, x, y + row, S, 1, v);
            }
        }
        ContextClass::Affectivity => {
            for col in (0..S).step_by(3) {
                fill_rect(img, x + col, y, 1, S, v);
            }
        }
        ContextClass::Rites => {
            for i in 0..S {
                put_clamped(img, x + i, y + i, v);
            }
        }
        ContextClass::School => {
            for yy in 0..S {
                for xx in 0..S {
                    if (xx / 2 + yy / 2) % 2 == 0 {
                        put_clamped(img, x + xx, y + yy, v);
                    }
                }
            }
        }
        ContextClass::Politics => {
            for yy in (1..S).step_by(4) {
                for xx in (1..S).step_by(4) {
                    fill_rect(img, x + xx, y + yy, 2, 2, v);
                }
            }
        }
    }
}

/// Brightness encoding of the year index used inside face/person regions.
/// Steps of 23 gray levels keep neighbouring years separable after the
/// mild rescaling that crop expansion and letterboxing introduce.
fn year_brightness(year_idx: usize) -> u8 {
    (25 + year_idx * 23).min(255) as u8
}

/// Generate the dataset under `dir`: `images/` with sidecar detections plus
/// `manifest.csv`. Deterministic for a given config.
pub fn generate(dir: &Path, config: &SyntheticConfig) -> Result<SyntheticSummary> {
    if config.years.is_empty() || config.years.len() > YEAR_BAR_WIDTHS.len() {
        return Err(CoreError::InvalidArgument(format!(
            "synthetic years must number 1..={}, got {}",
            YEAR_BAR_WIDTHS.len(),
            config.years.len()
        )));
    }
    if config.image_size < 32 {
        return Err(CoreError::InvalidArgument("synthetic image size must be >= 32".into()));
    }
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| CoreError::io(&image_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.image_size;
    let mut manifest = String::from("photo_id,image_path,year,context,description,city,nation\n");

    for i in 0..config.photos {
        let year_idx = i % config.years.len();
        let year = config.years[year_idx];
        let context = ContextClass::ALL[(i / config.years.len()) % ContextClass::ALL.len()];
        let photo_id = format!("synth_{i:05}");
        let file_name = format!("{photo_id}.png");

        // Background noise.
        let mut img = RgbImage::new(size, size);
        for p in img.pixels_mut() {
            let v = 15 + rng.random_range(0..12) as u8;
            *p = Rgb([v, v, v]);
        }

        // Year bar: vertical, horizontally centered, full height.
        let bar_w = YEAR_BAR_WIDTHS[year_idx] * size / 48;
        let bar_w = bar_w.max(2);
        let bar_x = (size - bar_w) / 2;
        let bar_v = 190 + rng.random_range(0..20) as u8;
        fill_rect(&mut img, bar_x as i64, 0, bar_w as i64, size as i64, bar_v);

        // Regions: faces (squares) and people (taller rectangles), brightness
        // keyed to the year. Kept inside the lower 60% so the glyph area
        // stays clear.
        let n_regions = match config.fixed_regions {
            Some(n) => n,
            None => rng.random_range(1..=config.max_regions.max(1)),
        };
        let mut boxes = Vec::new();
        let brightness = year_brightness(year_idx);
        let face_s = (size / 4).max(10);
        let person_w = (size / 4).max(10);
        let person_h = (size * 2 / 5).max(16);
        for r in 0..n_regions {
            let fx = rng.random_range(1..size.saturating_sub(face_s + 1));
            let fy = rng.random_range(size * 2 / 5..size.saturating_sub(face_s + 1));
            fill_rect(&mut img, fx as i64, fy as i64, face_s as i64, face_s as i64, brightness);
            // 1px frame so crops have visible structure.
            fill_rect(&mut img, fx as i64, fy as i64, face_s as i64, 1, brightness / 2);
            fill_rect(&mut img, fx as i64, (fy + face_s - 1) as i64, face_s as i64, 1, brightness / 2);
            boxes.push(DetectionBox {
                x: fx as f64,
                y: fy as f64,
                w: face_s as f64,
                h: face_s as f64,
                confidence: 0.9 - 0.01 * r as f64,
                kind: RegionKind::Face,
            });

            let px = rng.random_range(1..size.saturating_sub(person_w + 1));
            let py = rng.random_range(size / 3..size.saturating_sub(person_h + 1));
            fill_rect(&mut img, px as i64, py as i64, person_w as i64, person_h as i64, brightness);
            boxes.push(DetectionBox {
                x: px as f64,
                y: py as f64,
                w: person_w as f64,
                h: person_h as f64,
                confidence: 0.85 - 0.01 * r as f64,
                kind: RegionKind::Person,
            });
        }

        // Context glyph, drawn last so nothing occludes it.
        draw_glyph(&mut img, context, 4, 4);

        let path = image_dir.join(&file_name);
        img.save(&path)
            .map_err(|e| CoreError::Image { path: path.clone(), message: e.to_string() })?;
        SidecarDetector::write_sidecar(&path, &boxes)?;

        manifest.push_str(&format!(
            "{photo_id},images/{file_name},{year},{context},synthetic family photo,Testville,Synthia\n"
        ));
    }

    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| CoreError::io(&manifest_path, e))?;
    Ok(SyntheticSummary {
        photos: config.photos,
        manifest: manifest_path,
        image_dir,
        years: config.years.clone(),
    })
}
