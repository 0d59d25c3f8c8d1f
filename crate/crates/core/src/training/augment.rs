//! Training-time augmentation: random area crop and horizontal flip.

use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imageio;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub random_crop: bool,
    pub horizontal_flip: bool,
    /// Probability of flipping when `horizontal_flip` is on.
    pub flip_prob: f64,
    /// Crop keeps a uniformly drawn fraction of the image area in this range.
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            random_crop: true,
            horizontal_flip: true,
            flip_prob: 0.5,
            crop_scale_min: 0.8,
            crop_scale_max: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> AugmentConfig {
        AugmentConfig { random_crop: false, horizontal_flip: false, ..AugmentConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(CoreError::Training(format!("flip probability {} outside [0,1]", self.flip_prob)));
        }
        if !(self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0)
        {
            return Err(CoreError::Training(format!(
                "crop scale range [{}, {}] must sit inside (0, 1]",
                self.crop_scale_min, self.crop_scale_max
            )));
        }
        Ok(())
    }

    /// Area fraction of the deterministic center crop used at eval time:
    /// the midpoint of the training crop range.
    pub fn eval_crop_fraction(&self) -> f64 {
        if self.random_crop {
            (self.crop_scale_min + self.crop_scale_max) / 2.0
        } else {
            1.0
        }
    }
}

/// Apply the configured randomized transforms. With both switches off this
/// is the identity. Deterministic for a fixed RNG stream.
pub fn augment(img: &RgbImage, config: &AugmentConfig, rng: &mut impl Rng) -> Result<RgbImage> {
    config.validate()?;
    let mut out = img.clone();
    if config.random_crop {
        let scale = if config.crop_scale_min == config.crop_scale_max {
            config.crop_scale_min
        } else {
            rng.random_range(config.crop_scale_min..=config.crop_scale_max)
        };
        let side = scale.sqrt();
        let (w, h) = (out.width(), out.height());
        let cw = ((w as f64 * side).round() as u32).clamp(1, w);
        let ch = ((h as f64 * side).round() as u32).clamp(1, h);
        if cw > w || ch > h {
            return Err(CoreError::Training(format!(
                "crop {cw}x{ch} exceeds image {w}x{h}"
            )));
        }
        let x0 = if cw < w { rng.random_range(0..=w - cw) } else { 0 };
        let y0 = if ch < h { rng.random_range(0..=h - ch) } else { 0 };
        let cropped = image::imageops::crop_imm(&out, x0, y0, cw, ch).to_image();
        out = image::imageops::resize(&cropped, w, h, FilterType::Triangle);
    }
    if config.horizontal_flip && rng.random::<f64>() < config.flip_prob {
        out = image::imageops::flip_horizontal(&out);
    }
    Ok(out)
}

/// Deterministic eval-time transform: center crop at the mean training crop
/// fraction, no flip.
pub fn eval_transform(img: &RgbImage, config: &AugmentConfig) -> RgbImage {
    let fraction = config.eval_crop_fraction();
    if fraction >= 1.0 {
        img.clone()
    } else {
        imageio::center_crop(img, fraction)
    }
}
