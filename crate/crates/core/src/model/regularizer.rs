//! Bias regularizer, its bound on the intractable tangential variance, and
//! encoder recovery.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::LinearEncoder;
use crate::linalg::{covariance_trace, transpose_apply, GramFactor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::generator::{GenBinding, GenLayer, GenLayerNodes, Generator};

/// Floor inside every log of the regularizer and the encoding penalty.
pub const EPS_REG: f64 = 1e-12;

/// `Σ_l log(trace(cov(U_lᵀa_l⁽ⁱ⁾)) + ε)`.
pub fn bias_regularizer<T: Scalar>(gen: &Generator<T>, eps: f64) -> Result<T> {
    Ok(per_layer_regularizer(gen, eps)?.into_iter().sum())
}

/// Per-layer terms of [`bias_regularizer`].
pub fn per_layer_regularizer<T: Scalar>(gen: &Generator<T>, eps: f64) -> Result<Vec<T>> {
    if gen.num_biases() < 2 {
        return Err(Error::contract(format!(
            "bias regularizer needs at least 2 biases, got {}",
            gen.num_biases()
        )));
    }
    Ok(gen
        .multi_bias_layers()
        .map(|m| (m.alignment_residual() + T::c(eps)).ln())
        .collect())
}

/// Graph node for [`bias_regularizer`], differentiable in every U_l and a_l⁽ⁱ⁾.
pub fn bias_regularizer_graph<T: Scalar>(
    gen: &Generator<T>,
    g: &mut Graph<T>,
    binding: &GenBinding,
    eps: f64,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for (layer, nodes) in gen.layers().iter().zip(&binding.layers) {
        if let (GenLayer::MultiBias(m), GenLayerNodes::MultiBias(n)) = (layer, nodes) {
            let term = m.regularizer_graph(g, *n, T::c(eps))?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::contract("generator has no multi-bias layer"))
}

/// Both sides of `trace(cov(Uᵀa)) ≥ (1/d_z)·H(λ)·trace(cov(a_∥))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop1Report {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Harmonic mean of the eigenvalues of UᵀU.
    pub harmonic_mean: f64,
    /// trace(cov(a_∥)), the quantity the regularizer bounds.
    pub tangential_trace: f64,
}

/// Evaluates the inequality in 64-bit: the left side directly from the codes
/// Uᵀa⁽ⁱ⁾, the right side from the eigenvalues of UᵀU and the projections
/// U(UᵀU)⁻¹Uᵀa⁽ⁱ⁾.
pub fn prop1_check<T: Scalar>(u: &Tensor<T>, biases: &[Tensor<T>]) -> Result<Prop1Report> {
    if biases.len() < 2 {
        return Err(Error::contract(format!(
            "inequality check needs at least 2 biases, got {}",
            biases.len()
        )));
    }
    let u: Tensor<f64> = u.cast();
    let biases: Vec<Tensor<f64>> = biases.iter().map(|b| b.cast()).collect();
    let factor = GramFactor::new(&u)?;
    let codes = biases
        .iter()
        .map(|a| transpose_apply(&u, a.data()))
        .collect::<Result<Vec<_>>>()?;
    let lhs = covariance_trace(&codes)?;

    let d_z = u.cols() as f64;
    let inv_sum: f64 = factor.values.iter().map(|l| 1.0 / l).sum();
    let harmonic_mean = d_z / inv_sum;
    let tangential = codes
        .iter()
        .map(|c| u.matmul(&Tensor::matrix(u.cols(), 1, factor.solve(c.data()))?)?.reshape(&[u.rows()]))
        .collect::<Result<Vec<_>>>()?;
    let tangential_trace = covariance_trace(&tangential)?;
    let rhs = harmonic_mean / d_z * tangential_trace;
    Ok(Prop1Report {
        lhs,
        rhs,
        margin: lhs - rhs,
        harmonic_mean,
        tangential_trace,
    })
}

/// Inequality report for every multi-bias layer of a generator.
pub fn prop1_layers<T: Scalar>(gen: &Generator<T>) -> Result<Vec<Prop1Report>> {
    gen.multi_bias_layers()
        .map(|m| prop1_check(m.weight(), &m.bias_list()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RecoveredLayer<T> {
    pub encoder: LinearEncoder<T>,
    /// trace(cov(Uᵀa⁽ⁱ⁾)): zero when the shared-tangential condition holds exactly.
    pub residual: T,
}

/// `W_l = U_l(U_lᵀU_l)⁻¹`, `b_l = −(U_lᵀU_l)⁻¹U_lᵀā_l` per multi-bias layer.
pub fn recover_encoder<T: Scalar>(gen: &Generator<T>) -> Result<Vec<RecoveredLayer<T>>> {
    gen.multi_bias_layers()
        .map(|m| {
            Ok(RecoveredLayer {
                encoder: m.encoder()?,
                residual: m.alignment_residual(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, MultiBiasLinear};
    use crate::model::generator::MlpSpec;
    use crate::rng::seeded;

    fn padded_identity() -> Tensor<f64> {
        Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    fn one_layer(weight: Tensor<f64>, biases: Tensor<f64>) -> Generator<f64> {
        Generator::new(vec![
            GenLayer::MultiBias(MultiBiasLinear::new(weight, biases).unwrap()),
            GenLayer::Activation(Activation::Tanh),
        ])
        .unwrap()
    }

    #[test]
    fn equal_biases_hit_the_floor() {
        let gen = one_layer(padded_identity(), Tensor::full(&[3, 3], 0.4));
        let r = bias_regularizer(&gen, EPS_REG).unwrap();
        assert!((r - EPS_REG.ln()).abs() < 1e-9);
    }

    #[test]
    fn normal_only_spread_hits_the_floor() {
        let biases = Tensor::matrix(3, 3, vec![0.1, 0.2, 0.0, 0.1, 0.2, 3.0, 0.1, 0.2, -1.0]).unwrap();
        let gen = one_layer(padded_identity(), biases);
        let r = bias_regularizer(&gen, EPS_REG).unwrap();
        assert!((r - EPS_REG.ln()).abs() < 1e-9);
    }

    #[test]
    fn single_bias_is_rejected() {
        let gen = one_layer(padded_identity(), Tensor::zeros(&[1, 3]));
        assert!(matches!(bias_regularizer(&gen, EPS_REG), Err(Error::Contract(_))));
    }

    #[test]
    fn matches_composed_oracle_and_graph() {
        let mut rng = seeded(1);
        let spec = MlpSpec {
            d_z: 2,
            hidden: vec![5],
            d_x: 9,
            num_biases: 3,
            slope: 0.2,
            bias_sd: 0.7,
        };
        let gen = Generator::<f64>::mlp(&spec, &mut rng).unwrap();
        let oracle: f64 = gen
            .multi_bias_layers()
            .map(|m| {
                let codes: Vec<Tensor<f64>> = m
                    .bias_list()
                    .iter()
                    .map(|a| m.weight().transpose().matmul(a).unwrap())
                    .collect();
                (covariance_trace(&codes).unwrap() + EPS_REG).ln()
            })
            .sum();
        let direct = bias_regularizer(&gen, EPS_REG).unwrap();
        assert!((direct - oracle).abs() < 1e-10);

        let mut g = Graph::new();
        let binding = gen.bind(&mut g, true);
        let node = bias_regularizer_graph(&gen, &mut g, &binding, EPS_REG).unwrap();
        assert!((g.scalar_value(node) - oracle).abs() < 1e-10);
    }

    #[test]
    fn identical_biases_make_inequality_tight() {
        let mut rng = seeded(2);
        let u = Tensor::<f64>::randn(&[6, 3], 1.0, &mut rng);
        let a = Tensor::<f64>::randn(&[6], 1.0, &mut rng);
        let r = prop1_check(&u, &[a.clone(), a.clone(), a]).unwrap();
        assert!(r.lhs.abs() < 1e-24 && r.rhs.abs() < 1e-24);
    }

    #[test]
    fn orthonormal_columns_simplify() {
        let mut rng = seeded(3);
        let s = 1.0 / 2f64.sqrt();
        let u = Tensor::matrix(4, 2, vec![s, 0.0, s, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let biases: Vec<Tensor<f64>> = (0..5).map(|_| Tensor::randn(&[4], 1.0, &mut rng)).collect();
        let r = prop1_check(&u, &biases).unwrap();
        assert!((r.harmonic_mean - 1.0).abs() < 1e-12);
        assert!((r.lhs - r.tangential_trace).abs() < 1e-12);
        assert!((r.rhs - r.lhs / 2.0).abs() < 1e-12);
        assert!((r.margin - 0.5 * r.lhs).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_encoder_is_transpose() {
        let biases = Tensor::matrix(2, 3, vec![0.3, -0.1, 2.0, 0.5, 0.1, -1.0]).unwrap();
        let gen = one_layer(padded_identity(), biases);
        let rec = recover_encoder(&gen).unwrap();
        assert!(rec[0].encoder.w.max_abs_diff(&padded_identity()) < 1e-14);
        assert!(rec[0].encoder.b.max_abs_diff(&Tensor::vector(vec![-0.4, 0.0])) < 1e-14);
        assert!((rec[0].residual - 0.04).abs() < 1e-14);
    }

    #[test]
    fn encoder_is_left_inverse() {
        let mut rng = seeded(4);
        for _ in 0..20 {
            let u = Tensor::<f64>::randn(&[7, 3], 1.0, &mut rng);
            let gen = one_layer(u.clone(), Tensor::randn(&[2, 7], 1.0, &mut rng));
            let w = &recover_encoder(&gen).unwrap()[0].encoder.w;
            let wtu = w.transpose().matmul(&u).unwrap();
            assert!(wtu.max_abs_diff(&Tensor::identity(3)) < 1e-9);
        }
    }

    #[test]
    fn aligned_encoder_recovers_latent_for_every_bias() {
        let mut rng = seeded(5);
        let mut m = MultiBiasLinear::<f64>::init(3, 8, 4, 1.0, &mut rng).unwrap();
        m.align_tangential().unwrap();
        let enc = m.encoder().unwrap();
        let z = Tensor::randn(&[3], 1.0, &mut rng);
        for i in 0..4 {
            let back = enc.apply(&m.forward(&z, i).unwrap()).unwrap();
            assert!(back.max_abs_diff(&z) < 1e-8);
        }
    }
}
