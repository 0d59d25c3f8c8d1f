//! 2-D convolution (stride 1) via im2col and one GEMM per batch.
//! The unfold/fold passes parallelize over the batch axis.

use ndarray::{Array2, Array4, Ix1, Ix4};
use rand::Rng;
use rayon::prelude::*;

use super::{he_init, Param};

/// Stride-1 convolution with square kernels.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // (out_c, in_c, k, k)
    pub bias: Param,   // (out_c,)
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
}

/// Saved forward state needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_dim: (usize, usize, usize, usize),
    col: Array2<f64>, // (N*OH*OW, in_c*k*k)
}

impl Conv2d {
    pub fn new(
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
    ) -> Conv2d {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: he_init(rng, format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel], fan_in),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kernel,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h + 2 * self.pad - self.kernel + 1, w + 2 * self.pad - self.kernel + 1)
    }

    pub fn forward(&self, x: &Array4<f64>, cache: Option<&mut Option<ConvCache>>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv {} expects {} input channels, got {c}", self.weight.name, self.in_channels);
        let (oh, ow) = self.out_hw(h, w);
        let col = im2col(x, self.kernel, self.pad);
        // (in_c*k*k, out_c)
        let w_mat = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .unwrap()
            .t()
            .to_owned();
        let mut out_mat = col.dot(&w_mat); // (N*OH*OW, out_c)
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        for mut row in out_mat.rows_mut() {
            row += &bias;
        }
        if let Some(slot) = cache {
            *slot = Some(ConvCache { input_dim: (n, c, h, w), col });
        }
        rows_to_nchw(&out_mat, n, self.out_channels, oh, ow)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache, dout: &Array4<f64>) -> Array4<f64> {
        let (n, _c, h, w) = cache.input_dim;
        let (dn, df, oh, ow) = dout.dim();
        assert_eq!(dn, n);
        assert_eq!(df, self.out_channels);
        let dout_mat = nchw_to_rows(dout); // (N*OH*OW, out_c)

        // dW = colᵀ · dout, reshaped back to (out_c, in_c, k, k).
        let dw = cache.col.t().dot(&dout_mat); // (in_c*k*k, out_c)
        let ckk = self.in_channels * self.kernel * self.kernel;
        {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.out_channels, ckk))
                .unwrap();
            wgrad += &dw.t();
        }
        {
            let mut bgrad = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            bgrad += &dout_mat.sum_axis(ndarray::Axis(0));
        }

        // dX = col2im(dout · Wᵀ)
        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, ckk))
            .unwrap()
            .to_owned();
        let dcol = dout_mat.dot(&w_mat); // (N*OH*OW, in_c*k*k)
        col2im(&dcol, (n, self.in_channels, h, w), self.kernel, self.pad, oh, ow)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Unfold (N,C,H,W) into rows of receptive fields: (N*OH*OW, C*k*k).
fn im2col(x: &Array4<f64>, k: usize, pad: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let oh = h + 2 * pad - k + 1;
    let ow = w + 2 * pad - k + 1;
    let mut col = Array2::<f64>::zeros((n * oh * ow, c * k * k));
    let xs = x.as_slice().expect("x contiguous");
    let ckk = c * k * k;
    let sample_rows = oh * ow * ckk;
    col.as_slice_mut()
        .expect("col contiguous")
        .par_chunks_mut(sample_rows)
        .enumerate()
        .for_each(|(ni, cs)| {
            let xn = &xs[ni * c * h * w..(ni + 1) * c * h * w];
            for oi in 0..oh {
                for oj in 0..ow {
                    let row = (oi * ow + oj) * ckk;
                    for ci in 0..c {
                        for ki in 0..k {
                            let ri = (oi + ki) as isize - pad as isize;
                            if ri < 0 || ri >= h as isize {
                                continue;
                            }
                            let xbase = (ci * h + ri as usize) * w;
                            let cbase = row + (ci * k + ki) * k;
                            for kj in 0..k {
                                let rj = (oj + kj) as isize - pad as isize;
                                if rj < 0 || rj >= w as isize {
                                    continue;
                                }
                                cs[cbase + kj] = xn[xbase + rj as usize];
                            }
                        }
                    }
                }
            }
        });
    col
}

/// Fold gradient rows back onto the input, accumulating overlaps.
fn col2im(
    dcol: &Array2<f64>,
    input_dim: (usize, usize, usize, usize),
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<f64> {
    let (n, c, h, w) = input_dim;
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    let ds = dcol.as_slice().expect("dcol contiguous");
    let ckk = c * k * k;
    let sample_cols = oh * ow * ckk;
    dx.as_slice_mut()
        .expect("dx contiguous")
        .par_chunks_mut(c * h * w)
        .enumerate()
        .for_each(|(ni, xn)| {
            let dn = &ds[ni * sample_cols..(ni + 1) * sample_cols];
            for oi in 0..oh {
                for oj in 0..ow {
                    let row = (oi * ow + oj) * ckk;
                    for ci in 0..c {
                        for ki in 0..k {
                            let ri = (oi + ki) as isize - pad as isize;
                            if ri < 0 || ri >= h as isize {
                                continue;
                            }
                            let xbase = (ci * h + ri as usize) * w;
                            let cbase = row + (ci * k + ki) * k;
                            for kj in 0..k {
                                let rj = (oj + kj) as isize - pad as isize;
                                if rj < 0 || rj >= w as isize {
                                    continue;
                                }
                                xn[xbase + rj as usize] += dn[cbase + kj];
                            }
                        }
                    }
                }
            }
        });
    dx
}

/// (N*OH*OW, F) rows -> (N, F, OH, OW).
fn rows_to_nchw(mat: &Array2<f64>, n: usize, f: usize, oh: usize, ow: usize) -> Array4<f64> {
    let mut out = Array4::<f64>::zeros((n, f, oh, ow));
    let ms = mat.as_slice().expect("mat contiguous");
    let plane = f * oh * ow;
    out.as_slice_mut()
        .expect("out contiguous")
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(ni, os)| {
            let mn = &ms[ni * plane..(ni + 1) * plane];
            for oi in 0..oh {
                for oj in 0..ow {
                    let row = (oi * ow + oj) * f;
                    for fi in 0..f {
                        os[(fi * oh + oi) * ow + oj] = mn[row + fi];
                    }
                }
            }
        });
    out
}

/// (N, F, OH, OW) -> (N*OH*OW, F) rows.
fn nchw_to_rows(x: &Array4<f64>) -> Array2<f64> {
    let (n, f, oh, ow) = x.dim();
    let mut out = Array2::<f64>::zeros((n * oh * ow, f));
    let xs = x.as_slice().expect("x contiguous");
    let plane = f * oh * ow;
    out.as_slice_mut()
        .expect("out contiguous")
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(ni, os)| {
            let xn = &xs[ni * plane..(ni + 1) * plane];
            for fi in 0..f {
                for oi in 0..oh {
                    for oj in 0..ow {
                        os[(oi * ow + oj) * f + fi] = xn[(fi * oh + oi) * ow + oj];
                    }
                }
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(&mut rng, "c", 1, 1, 3, 1);
        conv.weight.value.fill(0.0);
        conv.weight.value[[0, 0, 1, 1]] = 1.0;
        conv.bias.value.fill(0.0);
        let x = Array4::from_shape_fn((1, 1, 5, 5), |(_, _, i, j)| (i * 5 + j) as f64);
        let y = conv.forward(&x, None);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::new(&mut rng, "c", 2, 3, 3, 1);
        let x = Array4::from_shape_fn((2, 2, 5, 4), |_| super::super::normal_sample(&mut rng) * 0.5);
        // Scalar objective: weighted sum of outputs with fixed coefficients.
        let coef = Array4::from_shape_fn((2, 3, 5, 4), |_| super::super::normal_sample(&mut rng));
        let objective = |c: &Conv2d, x: &Array4<f64>| -> f64 { (&c.forward(x, None) * &coef).sum() };

        let mut cache = None;
        let _ = conv.forward(&x, Some(&mut cache));
        let dx = conv.backward(cache.as_ref().unwrap(), &coef);

        let eps = 1e-6;
        // Input gradient.
        let mut xp = x.clone();
        for idx in [(0, 0, 0, 0), (1, 1, 4, 3), (0, 1, 2, 2)] {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let fp = objective(&conv, &xp);
            xp[idx] = orig - eps;
            let fm = objective(&conv, &xp);
            xp[idx] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            assert!((dx[idx] - numeric).abs() < 1e-6, "dx {:?}: {} vs {numeric}", idx, dx[idx]);
        }
        // Weight gradient.
        for flat in [0usize, 7, 23] {
            let orig = conv.weight.value.as_slice().unwrap()[flat];
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig + eps;
            let fp = objective(&conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig - eps;
            let fm = objective(&conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = conv.weight.grad.as_slice().unwrap()[flat];
            assert!((analytic - numeric).abs() < 1e-6, "dw[{flat}]: {analytic} vs {numeric}");
        }
        // Bias gradient.
        let orig = conv.bias.value[[1]];
        conv.bias.value[[1]] = orig + eps;
        let fp = objective(&conv, &x);
        conv.bias.value[[1]] = orig - eps;
        let fm = objective(&conv, &x);
        conv.bias.value[[1]] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        assert!((conv.bias.grad[[1]] - numeric).abs() < 1e-6);
    }

    #[test]
    fn one_by_one_conv_works() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = Conv2d::new(&mut rng, "c", 4, 2, 1, 0);
        let x = Array4::from_shape_fn((1, 4, 3, 3), |_| super::super::normal_sample(&mut rng));
        let y = conv.forward(&x, None);
        assert_eq!(y.dim(), (1, 2, 3, 3));
    }
}
