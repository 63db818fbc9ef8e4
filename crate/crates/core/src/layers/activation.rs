use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// tanh inputs to the inverse are clamped to ±(1 − TANH_CLAMP).
pub const TANH_CLAMP: f64 = 1e-7;

/// Elementwise bijection on R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::contract(format!(
                "leaky-relu slope must lie in (0, 1), got {slope}"
            )));
        }
        Ok(Activation::LeakyRelu { slope })
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        match *self {
            Activation::LeakyRelu { slope } => {
                let inv = T::one() / T::c(slope);
                x.map(|v| if v >= T::zero() { v } else { v / inv })
            }
            Activation::Tanh => x.map(|v| v.tanh()),
        }
    }

    /// Closed-form inverse. For tanh the input is clamped first, so values
    /// at the saturation boundary do not round-trip.
    pub fn invert<T: Scalar>(&self, y: &Tensor<T>) -> Tensor<T> {
        match *self {
            Activation::LeakyRelu { slope } => {
                let inv = T::one() / T::c(slope);
                y.map(|v| if v >= T::zero() { v } else { v * inv })
            }
            Activation::Tanh => {
                let bound = T::one() - T::c(TANH_CLAMP);
                y.map(|v| v.max(-bound).min(bound).atanh())
            }
        }
    }

    pub fn forward_graph<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> NodeId {
        match *self {
            Activation::LeakyRelu { slope } => g.leaky_relu(x, T::c(slope)),
            Activation::Tanh => g.tanh(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn leaky_relu_exact_round_trip() {
        let act = Activation::leaky_relu(0.2).unwrap();
        let x = Tensor::vector(vec![-3.0f64, 0.0, 5.0]);
        assert_eq!(act.invert(&act.forward(&x)), x);
    }

    #[test]
    fn tanh_round_trip() {
        let x = Tensor::vector(vec![0.7f64]);
        let back = Activation::Tanh.invert(&Activation::Tanh.forward(&x));
        assert!((back.data()[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn tanh_inverse_clamps_boundary() {
        let y = Tensor::vector(vec![1.0f64, -1.0, 2.0]);
        let x = Activation::Tanh.invert(&y);
        assert!(x.is_finite());
        assert!((x.data()[0] - (1.0f64 - TANH_CLAMP).atanh()).abs() < 1e-12);
    }

    #[test]
    fn random_round_trips() {
        let mut rng = seeded(9);
        let x = Tensor::<f64>::randn(&[200], 2.0, &mut rng);
        for act in [Activation::leaky_relu(0.2).unwrap(), Activation::Tanh] {
            let back = act.invert(&act.forward(&x));
            assert!(back.max_abs_diff(&x) < 1e-9);
        }
    }

    #[test]
    fn slope_must_be_in_unit_interval() {
        assert!(Activation::leaky_relu(0.0).is_err());
        assert!(Activation::leaky_relu(1.0).is_err());
    }
}
