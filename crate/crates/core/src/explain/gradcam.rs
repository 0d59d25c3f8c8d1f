//! Gradient-weighted class activation mapping.

use ndarray::{Array2, Array3, Axis};

use crate::error::{CoreError, Result};
use crate::models::{Branch, SingleInputModel};

/// A normalized attention map over the model input.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Input-geometry grid with values in [0, 1].
    pub values: Array2<f64>,
    pub target_class: usize,
    pub branch: Branch,
    /// Set when the gradient field vanished (e.g. a constant head); the map
    /// is then all zeros rather than noise.
    pub degenerate: bool,
}

impl Heatmap {
    /// Fraction of total heatmap mass inside a pixel rectangle.
    pub fn mass_in(&self, x0: usize, y0: usize, w: usize, h: usize) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for y in y0..(y0 + h).min(self.values.dim().0) {
            for x in x0..(x0 + w).min(self.values.dim().1) {
                acc += self.values[[y, x]];
            }
        }
        acc / total
    }
}

/// Bilinear upsample of a small activation grid to `(out_h, out_w)`.
fn upsample_bilinear(grid: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (gh, gw) = grid.dim();
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for y in 0..out_h {
        for x in 0..out_w {
            // Map the output pixel center into grid coordinates.
            let gy = ((y as f64 + 0.5) / out_h as f64) * gh as f64 - 0.5;
            let gx = ((x as f64 + 0.5) / out_w as f64) * gw as f64 - 0.5;
            let y0 = gy.floor().clamp(0.0, (gh - 1) as f64) as usize;
            let x0 = gx.floor().clamp(0.0, (gw - 1) as f64) as usize;
            let y1 = (y0 + 1).min(gh - 1);
            let x1 = (x0 + 1).min(gw - 1);
            let fy = (gy - y0 as f64).clamp(0.0, 1.0);
            let fx = (gx - x0 as f64).clamp(0.0, 1.0);
            out[[y, x]] = grid[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
                + grid[[y0, x1]] * (1.0 - fy) * fx
                + grid[[y1, x0]] * fy * (1.0 - fx)
                + grid[[y1, x1]] * fy * fx;
        }
    }
    out
}

/// Compute the class activation map for `target_class` on one input.
///
/// The model runs in eval mode. With the feature head reading a global
/// average pool, the gradient of the class logit with respect to the final
/// activation is the head row spread uniformly over space; channels are
/// weighted by that gradient's spatial mean, rectified, min-max normalized
/// and upsampled to the input geometry.
pub fn gradcam(model: &SingleInputModel, image: &Array3<f64>, target_class: usize) -> Result<Heatmap> {
    if target_class >= model.head.out_dim {
        return Err(CoreError::Explain(format!(
            "target class {target_class} out of range for {} classes",
            model.head.out_dim
        )));
    }
    let (_, in_h, in_w) = image.dim();
    let batch = image.clone().insert_axis(Axis(0));
    let (_feature, activation) = model.backbone.forward_explain(&batch);
    let (_, channels, gh, gw) = activation.dim();

    // d(logit_c)/d(feature): one-hot on the class through the head.
    let mut dlogits = Array2::<f64>::zeros((1, model.head.out_dim));
    dlogits[[0, target_class]] = 1.0;
    let dfeature = model.head.input_gradient(&dlogits); // (1, C)

    // GAP backward spreads the gradient uniformly, so the per-channel
    // weight is dfeature / (gh*gw); the constant factor cancels in the
    // normalization but the sign does not.
    let mut cam = Array2::<f64>::zeros((gh, gw));
    for c in 0..channels {
        let w = dfeature[[0, c]];
        if w == 0.0 {
            continue;
        }
        for y in 0..gh {
            for x in 0..gw {
                cam[[y, x]] += w * activation[[0, c, y, x]];
            }
        }
    }
    // Rectify: only positively contributing regions count.
    cam.mapv_inplace(|v| v.max(0.0));

    let max = cam.iter().cloned().fold(0.0f64, f64::max);
    let min = cam.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min < 1e-30 {
        return Ok(Heatmap {
            values: Array2::zeros((in_h, in_w)),
            target_class,
            branch: model.branch,
            degenerate: true,
        });
    }
    cam.mapv_inplace(|v| (v - min) / (max - min));
    let values = upsample_bilinear(&cam, in_h, in_w);
    Ok(Heatmap { values, target_class, branch: model.branch, degenerate: false })
}
