use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and report them for the running update.
    Train,
    /// Normalize with the frozen running statistics.
    Eval,
}

/// Batch statistics observed during a training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased per-feature variance (biased when the batch has one row).
    pub var: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNormNodes {
    pub gamma: NodeId,
    pub beta: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::full(&[dim], T::one()),
            beta: Tensor::zeros(&[dim]),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::full(&[dim], T::one()),
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.numel()
    }

    fn eval_affine(&self) -> (Vec<T>, Vec<T>) {
        let eps = T::c(self.epsilon);
        let mut scale = Vec::with_capacity(self.dim());
        let mut shift = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let inv_std = T::one() / (self.running_var.data()[k] + eps).sqrt();
            let s = self.gamma.data()[k] * inv_std;
            scale.push(s);
            shift.push(self.beta.data()[k] - self.running_mean.data()[k] * s);
        }
        (scale, shift)
    }

    /// Inference-mode forward on a single vector.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.numel() != self.dim() {
            return Err(Error::Dimension {
                op: "batchnorm",
                lhs: vec![self.dim()],
                rhs: x.shape().to_vec(),
            });
        }
        let (scale, shift) = self.eval_affine();
        Ok(Tensor::vector(
            x.data()
                .iter()
                .zip(scale.iter().zip(&shift))
                .map(|(&v, (&s, &b))| v * s + b)
                .collect(),
        ))
    }

    /// `x = (y − β)/γ · sqrt(running_var + ε) + running_mean`.
    pub fn invert(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        if y.numel() != self.dim() {
            return Err(Error::Dimension {
                op: "batchnorm_invert",
                lhs: vec![self.dim()],
                rhs: y.shape().to_vec(),
            });
        }
        if let Some(k) = self.gamma.data().iter().position(|&g| g == T::zero()) {
            return Err(Error::contract(format!(
                "batch-norm gamma[{k}] is zero; layer is not invertible"
            )));
        }
        let eps = T::c(self.epsilon);
        Ok(Tensor::vector(
            (0..self.dim())
                .map(|k| {
                    let std = (self.running_var.data()[k] + eps).sqrt();
                    (y.data()[k] - self.beta.data()[k]) / self.gamma.data()[k] * std
                        + self.running_mean.data()[k]
                })
                .collect(),
        ))
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BatchNormNodes {
        if trainable {
            BatchNormNodes {
                gamma: g.leaf(self.gamma.clone()),
                beta: g.leaf(self.beta.clone()),
            }
        } else {
            BatchNormNodes {
                gamma: g.constant(self.gamma.clone()),
                beta: g.constant(self.beta.clone()),
            }
        }
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        nodes: BatchNormNodes,
        x: NodeId,
        mode: BnMode,
    ) -> Result<(NodeId, Option<BatchStats<T>>)> {
        match mode {
            BnMode::Eval => {
                // Running statistics are constants; gamma/beta stay differentiable.
                let eps = T::c(self.epsilon);
                let inv_std = Tensor::vector(
                    self.running_var
                        .data()
                        .iter()
                        .map(|&v| T::one() / (v + eps).sqrt())
                        .collect(),
                );
                let neg_mean = g.constant(self.running_mean.scale(-T::one()));
                let inv_std = g.constant(inv_std);
                let centered = g.add_row(x, neg_mean)?;
                let normed = g.mul_row(centered, inv_std)?;
                let scaled = g.mul_row(normed, nodes.gamma)?;
                Ok((g.add_row(scaled, nodes.beta)?, None))
            }
            BnMode::Train => {
                let m = g.value(x).rows();
                let mean = g.mean_rows(x);
                let neg_mean = g.scale(mean, -T::one());
                let centered = g.add_row(x, neg_mean)?;
                let sq = g.square(centered);
                let var = g.mean_rows(sq);
                let stats = {
                    let biased = g.value(var).clone();
                    let correction = if m > 1 {
                        T::c(m as f64 / (m as f64 - 1.0))
                    } else {
                        T::one()
                    };
                    BatchStats {
                        mean: g.value(mean).clone(),
                        var: biased.scale(correction),
                    }
                };
                let shifted = g.add_scalar(var, T::c(self.epsilon));
                let std = g.sqrt(shifted);
                let inv_std = g.recip(std);
                let normed = g.mul_row(centered, inv_std)?;
                let scaled = g.mul_row(normed, nodes.gamma)?;
                Ok((g.add_row(scaled, nodes.beta)?, Some(stats)))
            }
        }
    }

    /// Exponential moving average toward the observed batch statistics.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let mom = T::c(self.momentum);
        let keep = T::one() - mom;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(stats.mean.data()) {
            *r = keep * *r + mom * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(stats.var.data()) {
            *r = keep * *r + mom * b;
        }
    }
}
