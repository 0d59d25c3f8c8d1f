//! Fully connected layer.

use ndarray::{Array2, Ix1, Ix2};
use rand::Rng;

use super::{he_init, Param};

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param, // (in_dim, out_dim)
    pub bias: Param,   // (out_dim,)
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
}

impl Dense {
    pub fn new(rng: &mut impl Rng, name: &str, in_dim: usize, out_dim: usize) -> Dense {
        Dense {
            weight: he_init(rng, format!("{name}.weight"), &[in_dim, out_dim], in_dim),
            bias: Param::zeros(format!("{name}.bias"), &[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &Array2<f64>, cache: Option<&mut Option<DenseCache>>) -> Array2<f64> {
        assert_eq!(x.dim().1, self.in_dim, "dense {} expects {} inputs", self.weight.name, self.in_dim);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut out = x.dot(&w);
        for mut row in out.rows_mut() {
            row += &b;
        }
        if let Some(slot) = cache {
            *slot = Some(DenseCache { input: x.clone() });
        }
        out
    }

    pub fn backward(&mut self, cache: &DenseCache, dout: &Array2<f64>) -> Array2<f64> {
        {
            let mut wgrad = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            wgrad += &cache.input.t().dot(dout);
        }
        {
            let mut bgrad = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            bgrad += &dout.sum_axis(ndarray::Axis(0));
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        dout.dot(&w.t())
    }

    /// Input gradient only, without touching parameter gradients. Used by
    /// explanation code that needs d(logit)/d(feature) in eval mode.
    pub fn input_gradient(&self, dout: &Array2<f64>) -> Array2<f64> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        dout.dot(&w.t())
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
