//! Image loading and geometry preparation for model input.

use std::path::Path;

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use ndarray::{Array3, Array4};

use crate::error::{CoreError, Result};

/// Decode an image file to RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| CoreError::Image { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(img.to_rgb8())
}

/// Decode only the dimensions (cheap decodability check).
pub fn image_dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path)
        .map_err(|e| CoreError::Image { path: path.to_path_buf(), message: e.to_string() })
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| CoreError::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Aspect-preserving resize onto a black square canvas of side `size`.
///
/// Person crops in particular have very different aspect ratios; letterboxing
/// avoids distorting them to the network's square input.
pub fn letterbox(img: &RgbImage, size: u32) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    if w == size && h == size {
        return img.clone();
    }
    let scale = size as f64 / w.max(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).clamp(1, size);
    let nh = ((h as f64 * scale).round() as u32).clamp(1, size);
    let resized = image::imageops::resize(img, nw, nh, FilterType::Triangle);
    let mut canvas = RgbImage::from_pixel(size, size, Rgb([0, 0, 0]));
    let ox = (size - nw) / 2;
    let oy = (size - nh) / 2;
    image::imageops::overlay(&mut canvas, &resized, ox as i64, oy as i64);
    canvas
}

/// Deterministic center crop keeping `area_fraction` of the image, resized
/// back to the original size. Used at validation/eval time in place of the
/// random training crop.
pub fn center_crop(img: &RgbImage, area_fraction: f64) -> RgbImage {
    let side = area_fraction.sqrt().clamp(0.05, 1.0);
    let (w, h) = (img.width(), img.height());
    let cw = ((w as f64 * side).round() as u32).max(1);
    let ch = ((h as f64 * side).round() as u32).max(1);
    if cw == w && ch == h {
        return img.clone();
    }
    let x = (w - cw) / 2;
    let y = (h - ch) / 2;
    let cropped = image::imageops::crop_imm(img, x, y, cw, ch).to_image();
    image::imageops::resize(&cropped, w, h, FilterType::Triangle)
}

/// Convert to a CHW tensor with values in [0, 1].
pub fn to_tensor(img: &RgbImage) -> Array3<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<f64>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
        }
    }
    out
}

/// Stack CHW tensors into an NCHW batch.
pub fn stack_batch(tensors: &[Array3<f64>]) -> Result<Array4<f64>> {
    if tensors.is_empty() {
        return Err(CoreError::InvalidArgument("cannot stack an empty batch".into()));
    }
    let shape = tensors[0].dim();
    let mut out = Array4::<f64>::zeros((tensors.len(), shape.0, shape.1, shape.2));
    for (i, t) in tensors.iter().enumerate() {
        if t.dim() != shape {
            return Err(CoreError::InvalidArgument(format!(
                "ragged batch: item 0 is {:?}, item {i} is {:?}",
                shape,
                t.dim()
            )));
        }
        out.index_axis_mut(ndarray::Axis(0), i).assign(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letterbox_preserves_aspect() {
        let img = RgbImage::from_pixel(100, 50, Rgb([200, 0, 0]));
        let out = letterbox(&img, 64);
        assert_eq!((out.width(), out.height()), (64, 64));
        // Top band is padding, middle is content.
        assert_eq!(out.get_pixel(32, 1).0, [0, 0, 0]);
        assert_eq!(out.get_pixel(32, 32).0[0] > 150, true);
    }

    #[test]
    fn letterbox_identity_when_square_of_right_size() {
        let img = RgbImage::from_pixel(48, 48, Rgb([1, 2, 3]));
        let out = letterbox(&img, 48);
        assert_eq!(out, img);
    }

    #[test]
    fn tensor_values_are_unit_scaled() {
        let img = RgbImage::from_pixel(4, 4, Rgb([255, 0, 128]));
        let t = to_tensor(&img);
        assert_eq!(t[[0, 0, 0]], 1.0);
        assert_eq!(t[[1, 2, 3]], 0.0);
        assert!((t[[2, 1, 1]] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn center_crop_is_deterministic_and_sized() {
        let mut img = RgbImage::new(40, 40);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([(x * 6) as u8, (y * 6) as u8, 0]);
        }
        let a = center_crop(&img, 0.9);
        let b = center_crop(&img, 0.9);
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height()), (40, 40));
    }

    #[test]
    fn stack_batch_rejects_ragged_inputs() {
        let a = Array3::<f64>::zeros((3, 8, 8));
        let b = Array3::<f64>::zeros((3, 9, 8));
        assert!(stack_batch(&[a.clone(), b]).is_err());
        assert!(stack_batch(&[a.clone(), a]).is_ok());
        assert!(stack_batch(&[]).is_err());
    }
}
