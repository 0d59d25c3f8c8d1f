//! Pooling and activation primitives.

use ndarray::{Array2, Array4};

/// Elementwise ReLU.
pub fn relu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

/// ReLU backward using the forward output as the mask.
pub fn relu_backward(dy: &Array4<f64>, y: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// 2x2 max pooling with stride 2. Requires even spatial dims.
/// Returns the pooled tensor and the within-window argmax (0..4) per output.
pub fn maxpool2(x: &Array4<f64>) -> (Array4<f64>, Array4<u8>) {
    let (n, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::<f64>::zeros((n, c, oh, ow));
    let mut arg = Array4::<u8>::zeros((n, c, oh, ow));
    let xs = x.as_slice().expect("x contiguous");
    let os = out.as_slice_mut().expect("out contiguous");
    let ags = arg.as_slice_mut().expect("arg contiguous");
    for plane in 0..n * c {
        let xbase = plane * h * w;
        let obase = plane * oh * ow;
        for oi in 0..oh {
            let r0 = xbase + (2 * oi) * w;
            let r1 = r0 + w;
            for oj in 0..ow {
                let j = 2 * oj;
                let cand = [xs[r0 + j], xs[r0 + j + 1], xs[r1 + j], xs[r1 + j + 1]];
                let mut best = cand[0];
                let mut which = 0u8;
                for (t, &v) in cand.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        which = t as u8;
                    }
                }
                os[obase + oi * ow + oj] = best;
                ags[obase + oi * ow + oj] = which;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(dy: &Array4<f64>, arg: &Array4<u8>, in_hw: (usize, usize)) -> Array4<f64> {
    let (n, c, oh, ow) = dy.dim();
    let (h, w) = in_hw;
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    let ds = dy.as_slice().expect("dy contiguous");
    let ags = arg.as_slice().expect("arg contiguous");
    let xs = dx.as_slice_mut().expect("dx contiguous");
    for plane in 0..n * c {
        let xbase = plane * h * w;
        let obase = plane * oh * ow;
        for oi in 0..oh {
            for oj in 0..ow {
                let o = obase + oi * ow + oj;
                let (di, dj) = [(0, 0), (0, 1), (1, 0), (1, 1)][ags[o] as usize];
                xs[xbase + (2 * oi + di) * w + 2 * oj + dj] += ds[o];
            }
        }
    }
    dx
}

/// Separable 3x3 box sum with zero padding (spatial dims preserved).
fn box3_sum(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let xs = x.as_slice().expect("x contiguous");
    // Horizontal pass.
    let mut tmp = vec![0.0f64; n * c * h * w];
    for row in 0..n * c * h {
        let base = row * w;
        for j in 0..w {
            let mut acc = xs[base + j];
            if j > 0 {
                acc += xs[base + j - 1];
            }
            if j + 1 < w {
                acc += xs[base + j + 1];
            }
            tmp[base + j] = acc;
        }
    }
    // Vertical pass.
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    let os = out.as_slice_mut().expect("out contiguous");
    for plane in 0..n * c {
        let pbase = plane * h * w;
        for i in 0..h {
            let r = pbase + i * w;
            for j in 0..w {
                let mut acc = tmp[r + j];
                if i > 0 {
                    acc += tmp[r - w + j];
                }
                if i + 1 < h {
                    acc += tmp[r + w + j];
                }
                os[r + j] = acc;
            }
        }
    }
    out
}

/// 3x3 average pooling, stride 1, zero padding 1 (spatial dims preserved).
/// The divisor is a constant 9 including padded zeros.
pub fn avgpool3_s1(x: &Array4<f64>) -> Array4<f64> {
    let mut out = box3_sum(x);
    out.mapv_inplace(|v| v / 9.0);
    out
}

/// The 3x3 neighborhood relation is symmetric, so the backward pass is the
/// same box filter applied to the output gradients.
pub fn avgpool3_backward(dy: &Array4<f64>) -> Array4<f64> {
    let mut out = box3_sum(dy);
    out.mapv_inplace(|v| v / 9.0);
    out
}

/// Global average pooling: (N, C, H, W) -> (N, C).
pub fn gap(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::<f64>::zeros((n, c));
    let scale = 1.0 / (h * w) as f64;
    let xs = x.as_slice().expect("x contiguous");
    let os = out.as_slice_mut().expect("out contiguous");
    for plane in 0..n * c {
        let base = plane * h * w;
        let acc: f64 = xs[base..base + h * w].iter().sum();
        os[plane] = acc * scale;
    }
    out
}

pub fn gap_backward(dfeat: &Array2<f64>, hw: (usize, usize)) -> Array4<f64> {
    let (n, c) = dfeat.dim();
    let scale = 1.0 / (hw.0 * hw.1) as f64;
    Array4::from_shape_fn((n, c, hw.0, hw.1), |(ni, ci, _, _)| dfeat[[ni, ci]] * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let mut x = Array4::<f64>::zeros((1, 1, 4, 4));
        x[[0, 0, 0, 1]] = 5.0;
        x[[0, 0, 2, 2]] = 3.0;
        let (y, arg) = maxpool2(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 3.0);
        let mut dy = Array4::<f64>::zeros((1, 1, 2, 2));
        dy[[0, 0, 0, 0]] = 1.0;
        let dx = maxpool2_backward(&dy, &arg, (4, 4));
        assert_eq!(dx[[0, 0, 0, 1]], 1.0);
        assert_eq!(dx.sum(), 1.0);
    }

    #[test]
    fn gap_roundtrip_gradient() {
        let x = Array4::from_shape_fn((2, 3, 4, 4), |(n, c, i, j)| (n + c + i + j) as f64);
        let y = gap(&x);
        let manual = x.index_axis(ndarray::Axis(0), 0).index_axis(ndarray::Axis(0), 0).mean().unwrap();
        assert!((y[[0, 0]] - manual).abs() < 1e-12);
        let dfeat = Array2::from_elem((2, 3), 16.0);
        let dx = gap_backward(&dfeat, (4, 4));
        assert_eq!(dx[[1, 2, 0, 0]], 1.0);
    }

    #[test]
    fn avgpool3_preserves_constant_interior() {
        let x = Array4::from_elem((1, 1, 6, 6), 2.0);
        let y = avgpool3_s1(&x);
        assert_eq!(y.dim(), (1, 1, 6, 6));
        assert!((y[[0, 0, 3, 3]] - 2.0).abs() < 1e-12);
        // Corner sees only 4 of 9 contributors.
        assert!((y[[0, 0, 0, 0]] - 2.0 * 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn relu_masks_gradient() {
        let x = Array4::from_shape_vec((1, 1, 1, 4), vec![-1.0, 0.0, 2.0, -3.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.as_slice().unwrap(), &[0.0, 0.0, 2.0, 0.0]);
        let dy = Array4::from_elem((1, 1, 1, 4), 1.0);
        let dx = relu_backward(&dy, &y);
        assert_eq!(dx.as_slice().unwrap(), &[0.0, 0.0, 1.0, 0.0]);
    }
}
