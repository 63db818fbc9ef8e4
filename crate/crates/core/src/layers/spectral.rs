//! Linear layer whose weight is divided by a power-iteration estimate of its
//! largest singular value.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound applied to the singular-value estimate.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNormLinear<T> {
    /// Raw weight `[out × in]`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    /// Left singular-vector estimate, length `out`.
    pub u: Tensor<T>,
    /// Right singular-vector estimate, length `in`.
    pub v: Tensor<T>,
    pub power_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    /// True when the estimate fell below [`SIGMA_FLOOR`] and was clamped.
    pub floored: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

fn normalized<T: Scalar>(x: Tensor<T>, fallback: &Tensor<T>) -> Tensor<T> {
    let n = x.norm();
    if n > T::c(1e-30) && n.is_finite() {
        x.scale(T::one() / n)
    } else {
        fallback.clone()
    }
}

fn random_unit<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor<T> {
    let x = Tensor::<T>::randn(&[n], 1.0, rng);
    let fallback = Tensor::from_fn(&[n], |k| if k == 0 { T::one() } else { T::zero() });
    normalized(x, &fallback)
}

impl<T: Scalar> SpectralNormLinear<T> {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let weight = Tensor::randn(&[d_out, d_in], 1.0 / (d_in as f64).sqrt(), rng);
        Self::from_weight(weight, rng)
    }

    /// Wraps an existing weight with a zero bias and random unit state vectors.
    pub fn from_weight<R: Rng + ?Sized>(weight: Tensor<T>, rng: &mut R) -> Self {
        let (d_out, d_in) = (weight.rows(), weight.cols());
        Self {
            bias: Tensor::zeros(&[d_out]),
            u: random_unit(d_out, rng),
            v: random_unit(d_in, rng),
            weight,
            power_iterations: 1,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    /// `iters` rounds of v ← Wᵀu/‖·‖, u ← Wv/‖·‖.
    pub fn power_iterate(&mut self, iters: usize) {
        for _ in 0..iters {
            let wtu = self.weight.transpose().matmul(&self.u).expect("u length");
            self.v = normalized(wtu, &self.v);
            let wv = self.weight.matmul(&self.v).expect("v length");
            self.u = normalized(wv, &self.u);
        }
    }

    /// σ̂ = uᵀWv with the current state vectors.
    pub fn estimate(&self) -> SpectralEstimate {
        let wv = self.weight.matmul(&self.v).expect("v length");
        let sigma = self.u.dot(&wv).f64();
        if sigma < SIGMA_FLOOR || !sigma.is_finite() {
            SpectralEstimate {
                sigma: SIGMA_FLOOR,
                floored: true,
            }
        } else {
            SpectralEstimate {
                sigma,
                floored: false,
            }
        }
    }

    /// Runs the configured power iterations, persists the state vectors and
    /// returns `W / σ̂`.
    pub fn spectral_normalize(&mut self) -> (Tensor<T>, SpectralEstimate) {
        self.power_iterate(self.power_iterations);
        self.effective_weight()
    }

    pub fn effective_weight(&self) -> (Tensor<T>, SpectralEstimate) {
        let est = self.estimate();
        (self.weight.scale(T::one() / T::c(est.sigma)), est)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (w, _) = self.effective_weight();
        w.matmul(&x.flatten())?.add(&self.bias)
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> SpectralNodes {
        if trainable {
            SpectralNodes {
                weight: g.leaf(self.weight.clone()),
                bias: g.leaf(self.bias.clone()),
            }
        } else {
            SpectralNodes {
                weight: g.constant(self.weight.clone()),
                bias: g.constant(self.bias.clone()),
            }
        }
    }

    /// Batched forward `x (W/σ̂)ᵀ + b`. The state vectors are constants;
    /// σ̂ stays differentiable through W.
    pub fn forward_graph(&self, g: &mut Graph<T>, nodes: SpectralNodes, x: NodeId) -> Result<NodeId> {
        let u = g.constant(self.u.as_column());
        let v = g.constant(self.v.as_column());
        let wv = g.matmul(nodes.weight, v)?;
        let prod = g.mul(wv, u)?;
        let sigma = g.sum(prod);
        let inv = if g.scalar_value(sigma).f64() < SIGMA_FLOOR {
            g.constant(Tensor::scalar(T::c(1.0 / SIGMA_FLOOR)))
        } else {
            g.recip(sigma)
        };
        let w_eff = g.scale_by(nodes.weight, inv)?;
        let wt = g.transpose(w_eff);
        let xw = g.matmul(x, wt)?;
        g.add_row(xw, nodes.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram, sym_eigen};
    use crate::rng::seeded;

    #[test]
    fn diagonal_spectrum() {
        let mut rng = seeded(31);
        let w = Tensor::matrix(2, 2, vec![3.0f64, 0.0, 0.0, 1.0]).unwrap();
        let mut layer = SpectralNormLinear::from_weight(w, &mut rng);
        layer.power_iterations = 50;
        let (eff, est) = layer.spectral_normalize();
        assert!((est.sigma - 3.0).abs() < 0.03);
        let expected = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0 / 3.0]).unwrap();
        assert!(eff.max_abs_diff(&expected) < 0.01);
    }

    #[test]
    fn orthogonal_weight_is_unchanged() {
        let mut rng = seeded(32);
        let (c, s) = (0.6f64, 0.8f64);
        let w = Tensor::matrix(2, 2, vec![c, -s, s, c]).unwrap();
        let mut layer = SpectralNormLinear::from_weight(w.clone(), &mut rng);
        layer.power_iterations = 50;
        let (eff, est) = layer.spectral_normalize();
        assert!((est.sigma - 1.0).abs() < 1e-9);
        assert!(eff.max_abs_diff(&w) < 1e-9);
    }

    #[test]
    fn random_matches_eigen_oracle() {
        let mut rng = seeded(33);
        for _ in 0..20 {
            let mut layer = SpectralNormLinear::<f64>::init(6, 8, &mut rng);
            layer.power_iterations = 50;
            let (_, est) = layer.spectral_normalize();
            let top = sym_eigen(&gram(&layer.weight)).unwrap().max().sqrt();
            assert!((est.sigma - top).abs() < 0.01 * top, "{} vs {}", est.sigma, top);
        }
    }

    #[test]
    fn zero_matrix_is_floored() {
        let mut rng = seeded(34);
        let mut layer = SpectralNormLinear::<f64>::from_weight(Tensor::zeros(&[3, 2]), &mut rng);
        let (eff, est) = layer.spectral_normalize();
        assert!(est.floored);
        assert!(eff.is_finite());
        assert!(layer.u.is_finite() && layer.v.is_finite());
    }

    #[test]
    fn state_persists_across_calls() {
        let mut rng = seeded(35);
        let mut layer = SpectralNormLinear::<f64>::init(5, 7, &mut rng);
        let u0 = layer.u.clone();
        layer.spectral_normalize();
        assert_ne!(layer.u, u0);
    }

    #[test]
    fn lipschitz_proxy_after_convergence() {
        let mut rng = seeded(36);
        let mut layer = SpectralNormLinear::<f64>::init(10, 16, &mut rng);
        layer.power_iterations = 50;
        let (eff, _) = layer.spectral_normalize();
        for _ in 0..1000 {
            let x = Tensor::randn(&[10], 1.0, &mut rng);
            let ratio = eff.matmul(&x).unwrap().norm() / x.norm();
            assert!(ratio <= 1.05);
        }
    }

    #[test]
    fn graph_forward_matches_direct() {
        let mut rng = seeded(37);
        let mut layer = SpectralNormLinear::<f64>::init(4, 3, &mut rng);
        layer.bias = Tensor::randn(&[3], 1.0, &mut rng);
        layer.power_iterate(5);
        let x = Tensor::<f64>::randn(&[4], 1.0, &mut rng);
        let mut g = Graph::new();
        let nodes = layer.bind(&mut g, true);
        let xn = g.constant(x.as_row());
        let y = layer.forward_graph(&mut g, nodes, xn).unwrap();
        assert!(g.value(y).max_abs_diff(&layer.forward(&x).unwrap()) < 1e-12);
    }
}
