//! Minimal CNN engine: f64 tensors, explicit forward/backward passes.
//!
//! Everything is deterministic given the seed. f64 keeps finite-difference
//! gradient checks and bit-exact reproducibility straightforward on CPU;
//! the networks here are small enough that the extra width costs little.

mod adam;
mod backbone;
mod conv;
mod dense;
mod loss;
mod pool;

pub use adam::Adam;
pub use backbone::{Backbone, BackboneFamily};
pub use conv::{Conv2d, ConvCache};
pub use dense::{Dense, DenseCache};
pub use loss::{argmax_lowest, softmax_rows, weighted_cross_entropy, LossOutput};
pub use pool::{avgpool3_backward, avgpool3_s1, gap, gap_backward, maxpool2, maxpool2_backward, relu, relu_backward};

use ndarray::ArrayD;
use rand::Rng;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Param {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { name: name.into(), value, grad }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Param {
        Param::new(name, ArrayD::zeros(shape.to_vec()))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Standard normal sample via Box-Muller, driven by the given RNG.
pub fn normal_sample(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// He-normal initialization: N(0, sqrt(2 / fan_in)).
pub fn he_init(rng: &mut impl Rng, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Param {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal_sample(rng) * std).collect();
    Param::new(name, ArrayD::from_shape_vec(shape.to_vec(), data).expect("shape matches len"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_init_is_seed_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let pa = he_init(&mut a, "w", &[4, 3, 3, 3], 27);
        let pb = he_init(&mut b, "w", &[4, 3, 3, 3], 27);
        assert_eq!(pa.value, pb.value);
    }

    #[test]
    fn normal_sample_has_sane_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| normal_sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
