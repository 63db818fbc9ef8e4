//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[Vec<usize>]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update with learning rate `lr` (overrides the configured rate so
    /// callers can schedule it).
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "param/grad count");
        assert_eq!(params.len(), self.m.len(), "param/moment count");
        self.step += 1;
        let b1 = T::c(self.config.beta1);
        let b2 = T::c(self.config.beta2);
        let c1 = T::one() - T::c(self.config.beta1.powi(self.step as i32));
        let c2 = T::one() - T::c(self.config.beta2.powi(self.step as i32));
        let eps = T::c(self.config.eps);
        let lr = T::c(lr);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mh = *mv / c1;
                let vh = *vv / c2;
                *pv -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::vector(vec![1.0, -1.0]);
        let g = Tensor::vector(vec![0.3, -5.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[vec![2]]);
        adam.update(&mut [&mut p], &[g], 0.1);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Tensor::<f64>::vector(vec![3.0]);
        let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..Default::default() }, &[vec![1]]);
        for _ in 0..2000 {
            let g = p.scale(2.0);
            adam.update(&mut [&mut p], &[g], 0.01);
        }
        assert!(p.data()[0].abs() < 1e-2);
    }
}
