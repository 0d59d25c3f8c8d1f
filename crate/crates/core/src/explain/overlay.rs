//! Heatmap rendering onto the source image.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::Branch;

use super::gradcam::Heatmap;

/// Blue -> cyan -> green -> yellow -> red ramp over [0, 1].
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let (r, g, b) = if v < 0.25 {
        (0.0, v / 0.25, 1.0)
    } else if v < 0.5 {
        (0.0, 1.0, 1.0 - (v - 0.25) / 0.25)
    } else if v < 0.75 {
        ((v - 0.5) / 0.25, 1.0, 0.0)
    } else {
        (1.0, 1.0 - (v - 0.75) / 0.25, 0.0)
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// Alpha-blend the color-mapped heatmap onto the image:
/// `out = (1 - opacity) * image + opacity * colormap(heat)`.
pub fn overlay(heatmap: &Heatmap, image: &RgbImage, opacity: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(CoreError::Explain(format!("opacity {opacity} outside [0,1]")));
    }
    let (h, w) = heatmap.values.dim();
    if (image.width() as usize, image.height() as usize) != (w, h) {
        return Err(CoreError::Explain(format!(
            "heatmap {w}x{h} does not match image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut out = RgbImage::new(image.width(), image.height());
    for (x, y, px) in image.enumerate_pixels() {
        let heat = colormap(heatmap.values[[y as usize, x as usize]]);
        let mut blended = [0u8; 3];
        for c in 0..3 {
            let v = (1.0 - opacity) * px.0[c] as f64 + opacity * heat[c] as f64;
            blended[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        out.put_pixel(x, y, Rgb(blended));
    }
    Ok(out)
}

/// Sidecar record written next to each overlay so misclassification studies
/// can pair the picture with its probability histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainRecord {
    pub photo_id: String,
    pub branch: Branch,
    pub target_class: usize,
    pub predicted_class: usize,
    pub probabilities: Vec<f64>,
    pub degenerate: bool,
    pub overlay_path: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn heatmap(h: usize, w: usize, v: f64) -> Heatmap {
        Heatmap {
            values: Array2::from_elem((h, w), v),
            target_class: 0,
            branch: Branch::Image,
            degenerate: false,
        }
    }

    #[test]
    fn zero_opacity_returns_original() {
        let img = RgbImage::from_pixel(8, 8, Rgb([12, 34, 56]));
        let out = overlay(&heatmap(8, 8, 0.7), &img, 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn full_opacity_is_pure_colormap() {
        let img = RgbImage::from_pixel(4, 4, Rgb([200, 10, 10]));
        let out = overlay(&heatmap(4, 4, 1.0), &img, 1.0).unwrap();
        assert_eq!(out.get_pixel(0, 0).0, colormap(1.0));
    }

    #[test]
    fn overlay_is_deterministic() {
        let mut img = RgbImage::new(6, 6);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([(x * 40) as u8, (y * 40) as u8, 128]);
        }
        let mut values = Array2::zeros((6, 6));
        for y in 0..6 {
            for x in 0..6 {
                values[[y, x]] = (x + y) as f64 / 10.0;
            }
        }
        let hm = Heatmap { values, target_class: 1, branch: Branch::Faces, degenerate: false };
        let a = overlay(&hm, &img, 0.4).unwrap();
        let b = overlay(&hm, &img, 0.4).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let img = RgbImage::new(8, 4);
        assert!(overlay(&heatmap(8, 8, 0.5), &img, 0.5).is_err());
        let img = RgbImage::new(8, 8);
        assert!(overlay(&heatmap(8, 8, 0.5), &img, 1.5).is_err());
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
        assert_eq!(colormap(0.5), [0, 255, 0]);
    }
}
