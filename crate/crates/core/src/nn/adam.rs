//! Adam with L2 weight decay folded into the gradient.

use std::collections::HashMap;

use ndarray::ArrayD;

use super::Param;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Adam {
        Adam {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every param and clear its gradient.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params {
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
            let value = p.value.as_slice_mut().expect("param contiguous");
            let grad = p.grad.as_slice_mut().expect("grad contiguous");
            let m = m.as_slice_mut().expect("m contiguous");
            let v = v.as_slice_mut().expect("v contiguous");
            for i in 0..value.len() {
                let g = grad[i] + self.weight_decay * value[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut p = Param::new("w", ArrayD::from_shape_vec(vec![2], vec![1.0, -2.0]).unwrap());
        p.grad.fill(3.0);
        let mut opt = Adam::new(0.0, 5e-4);
        opt.step(vec![&mut p]);
        assert_eq!(p.value.as_slice().unwrap(), &[1.0, -2.0]);
        // Gradient is consumed either way.
        assert_eq!(p.grad.sum(), 0.0);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With bias correction the first Adam step is ~lr in the gradient
        // direction regardless of gradient scale.
        let mut p = Param::new("w", ArrayD::from_shape_vec(vec![1], vec![0.0]).unwrap());
        p.grad.fill(10.0);
        let mut opt = Adam::new(1e-2, 0.0);
        opt.step(vec![&mut p]);
        assert!((p.value[[0]] + 1e-2).abs() < 1e-6, "got {}", p.value[[0]]);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = Param::new("w", ArrayD::from_shape_vec(vec![1], vec![5.0]).unwrap());
        // Zero task gradient: only decay acts.
        let mut opt = Adam::new(1e-3, 1e-1);
        for _ in 0..50 {
            opt.step(vec![&mut p]);
        }
        assert!(p.value[[0]] < 5.0);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = Param::new("w", ArrayD::from_shape_vec(vec![1], vec![3.0]).unwrap());
        let mut opt = Adam::new(5e-2, 0.0);
        for _ in 0..400 {
            let x = p.value[[0]];
            p.grad[[0]] = 2.0 * x; // d/dx x^2
            opt.step(vec![&mut p]);
        }
        assert!(p.value[[0]].abs() < 0.05, "got {}", p.value[[0]]);
    }
}
