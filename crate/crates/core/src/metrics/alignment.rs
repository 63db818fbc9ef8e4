use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{sampling::LatentPrior, Generator};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAlignment {
    /// Raw bias vectors `a⁽ⁱ⁾`.
    pub biases: Vec<Vec<f64>>,
    /// Tangential codes `Uᵀa⁽ⁱ⁾`.
    pub tangential: Vec<Vec<f64>>,
    /// Trace of the covariance of the tangential codes; zero for one bias.
    pub trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub layers: Vec<LayerAlignment>,
}

impl AlignmentReport {
    pub fn traces(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.trace).collect()
    }
}

pub fn alignment_report<T: Scalar>(gen: &Generator<T>) -> AlignmentReport {
    AlignmentReport {
        layers: gen
            .multi_bias_layers()
            .map(|m| LayerAlignment {
                biases: m.bias_list().iter().map(|b| b.to_f64_vec()).collect(),
                tangential: m.tangential_codes().iter().map(|c| c.to_f64_vec()).collect(),
                trace: m.alignment_residual().f64(),
            })
            .collect(),
    }
}

/// Empirical link between total alignment residual and closed-form
/// inversion error: `max_err ≤ C·√residual`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryConsistency {
    pub residual: f64,
    pub max_error: f64,
    /// `max_error / √residual`; `None` when the residual is zero.
    pub constant: Option<f64>,
}

/// Inverts `draws` samples per bias with the mean-bias encoders.
pub fn recovery_consistency<T: Scalar, R: Rng + ?Sized>(
    gen: &Generator<T>,
    draws: usize,
    rng: &mut R,
) -> Result<RecoveryConsistency> {
    let residual: f64 = gen.multi_bias_layers().map(|m| m.alignment_residual().f64()).sum();
    let prior = LatentPrior { d_z: gen.d_z() };
    let mut max_error = 0.0f64;
    for _ in 0..draws {
        let z = prior.draw::<T, _>(1, rng).flatten();
        for i in 0..gen.num_biases() {
            let back = gen.invert(&gen.forward(&z, i)?)?;
            max_error = max_error.max(back.sub(&z)?.norm().f64());
        }
    }
    Ok(RecoveryConsistency {
        residual,
        max_error,
        constant: (residual > 0.0).then(|| max_error / residual.sqrt()),
    })
}
