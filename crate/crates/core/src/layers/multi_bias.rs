//! Linear decoding layer with one shared weight and several decoding biases.
//!
//! A point on manifold `i` is produced as `U z + a⁽ⁱ⁾`. Encoding only sees
//! the component of the output tangential to col(U), so the layer defines a
//! single encoder `W = U(UᵀU)⁻¹`, `b = −(UᵀU)⁻¹Uᵀa` whenever the tangential
//! parts `Uᵀa⁽ⁱ⁾` agree across biases.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::linalg::{covariance_trace, transpose_apply, NormalSolver};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-element standard deviation of freshly drawn decoding biases.
pub const DEFAULT_BIAS_SD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiBiasLinear<T> {
    /// Decoder weight U, `[d_out × d_in]`.
    weight: Tensor<T>,
    /// Row `i` is the decoding bias a⁽ⁱ⁾, `[A × d_out]`.
    biases: Tensor<T>,
}

/// Graph handles for one bound layer.
#[derive(Debug, Clone, Copy)]
pub struct MultiBiasNodes {
    pub weight: NodeId,
    pub biases: NodeId,
}

/// Encoder recovered from a decoding layer: `z = wᵀy + b`.
#[derive(Debug, Clone)]
pub struct LinearEncoder<T> {
    /// `U(UᵀU)⁻¹`, `[d_out × d_in]`.
    pub w: Tensor<T>,
    /// `−(UᵀU)⁻¹Uᵀā`, length `d_in`.
    pub b: Tensor<T>,
}

impl<T: Scalar> LinearEncoder<T> {
    pub fn apply(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let wty = transpose_apply(&self.w, y.data())?;
        wty.add(&self.b)
    }
}

impl<T: Scalar> MultiBiasLinear<T> {
    pub fn new(weight: Tensor<T>, biases: Tensor<T>) -> Result<Self> {
        if weight.shape().len() != 2 || biases.shape().len() != 2 {
            return Err(Error::contract(format!(
                "multi-bias layer needs matrix weight and bias table, got {:?} and {:?}",
                weight.shape(),
                biases.shape()
            )));
        }
        let (d_out, d_in) = (weight.rows(), weight.cols());
        if d_in >= d_out {
            return Err(Error::contract(format!(
                "multi-bias layer must expand: d_in {d_in} >= d_out {d_out}"
            )));
        }
        if biases.cols() != d_out {
            return Err(Error::Dimension {
                op: "multi-bias biases",
                lhs: weight.shape().to_vec(),
                rhs: biases.shape().to_vec(),
            });
        }
        NormalSolver::new(&weight)?;
        Ok(Self { weight, biases })
    }

    /// U with entries N(0, 1/d_in), biases i.i.d. N(0, bias_sd²).
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        num_biases: usize,
        bias_sd: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_biases == 0 {
            return Err(Error::contract("a multi-bias layer needs at least one bias"));
        }
        let weight = Tensor::randn(&[d_out, d_in], 1.0 / (d_in as f64).sqrt(), rng);
        let biases = Tensor::randn(&[num_biases, d_out], bias_sd, rng);
        Self::new(weight, biases)
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_biases(&self) -> usize {
        self.biases.rows()
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn biases(&self) -> &Tensor<T> {
        &self.biases
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weight
    }

    pub fn biases_mut(&mut self) -> &mut Tensor<T> {
        &mut self.biases
    }

    pub fn parts_mut(&mut self) -> (&mut Tensor<T>, &mut Tensor<T>) {
        (&mut self.weight, &mut self.biases)
    }

    pub fn cast<U: Scalar>(&self) -> MultiBiasLinear<U> {
        MultiBiasLinear {
            weight: self.weight.cast(),
            biases: self.biases.cast(),
        }
    }

    pub fn bias(&self, i: usize) -> Tensor<T> {
        Tensor::vector(self.biases.row(i).to_vec())
    }

    pub fn bias_list(&self) -> Vec<Tensor<T>> {
        self.biases.row_vectors()
    }

    pub fn mean_bias(&self) -> Tensor<T> {
        self.biases.mean_rows()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_biases() {
            return Err(Error::contract(format!(
                "bias index {i} out of range for {} biases",
                self.num_biases()
            )));
        }
        Ok(())
    }

    /// `U x + a⁽ⁱ⁾` for one input vector.
    pub fn forward(&self, x: &Tensor<T>, i: usize) -> Result<Tensor<T>> {
        self.check_index(i)?;
        if x.numel() != self.d_in() {
            return Err(Error::Dimension {
                op: "mbl_forward",
                lhs: self.weight.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        let ux = self.weight.matmul(&x.flatten())?;
        ux.add(&self.bias(i))
    }

    /// Tangential codes `Uᵀa⁽ⁱ⁾`, one per bias.
    pub fn tangential_codes(&self) -> Vec<Tensor<T>> {
        (0..self.num_biases())
            .map(|i| transpose_apply(&self.weight, self.biases.row(i)).expect("bias width"))
            .collect()
    }

    /// Trace of the covariance of `{Uᵀa⁽ⁱ⁾}`; zero for a single bias.
    pub fn alignment_residual(&self) -> T {
        if self.num_biases() < 2 {
            return T::zero();
        }
        covariance_trace(&self.tangential_codes()).expect("at least two codes")
    }

    pub fn solver(&self) -> Result<NormalSolver<T>> {
        NormalSolver::new(&self.weight)
    }

    /// `W = U(UᵀU)⁻¹`, `b = −(UᵀU)⁻¹Uᵀā`.
    pub fn encoder(&self) -> Result<LinearEncoder<T>> {
        let solver = self.solver()?;
        let b = solver.apply(self.mean_bias().data())?.scale(-T::one());
        Ok(LinearEncoder {
            w: solver.pseudo_inverse_transpose(),
            b,
        })
    }

    /// Encodes `y` with the mean-bias encoder: `(UᵀU)⁻¹Uᵀ(y − ā)`.
    pub fn invert(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.invert_with(&self.solver()?, y)
    }

    pub(crate) fn invert_with(&self, solver: &NormalSolver<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        if y.numel() != self.d_out() {
            return Err(Error::Dimension {
                op: "mbl_invert",
                lhs: self.weight.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let centered = y.flatten().sub(&self.mean_bias())?;
        solver.apply(centered.data())
    }

    /// Removes each bias's tangential deviation from the mean, leaving the
    /// normal parts untouched: `a⁽ⁱ⁾ ← a⁽ⁱ⁾ − P(a⁽ⁱ⁾ − ā)`.
    pub fn align_tangential(&mut self) -> Result<()> {
        let projector = self.solver()?.projector();
        let mean = self.mean_bias();
        for i in 0..self.num_biases() {
            let dev = self.bias(i).sub(&mean)?;
            let tangential = projector.matmul(&dev)?;
            for (a, t) in self.biases.row_mut(i).iter_mut().zip(tangential.data()) {
                *a -= *t;
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> MultiBiasNodes {
        let mk = |g: &mut Graph<T>, t: &Tensor<T>| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        MultiBiasNodes {
            weight: mk(g, &self.weight),
            biases: mk(g, &self.biases),
        }
    }

    /// Batched forward: row `k` of `x` uses bias `indices[k]`.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        nodes: MultiBiasNodes,
        x: NodeId,
        indices: &[usize],
    ) -> Result<NodeId> {
        if indices.len() != g.value(x).rows() {
            return Err(Error::contract(format!(
                "{} bias indices for a batch of {}",
                indices.len(),
                g.value(x).rows()
            )));
        }
        let wt = g.transpose(nodes.weight);
        let xw = g.matmul(x, wt)?;
        let picked = g.gather_rows(nodes.biases, indices)?;
        g.add(xw, picked)
    }

    /// Forward with an explicit bias row node `[1 × d_out]` instead of a table
    /// lookup; used when the bias itself is being optimized.
    pub fn forward_graph_with_bias(
        &self,
        g: &mut Graph<T>,
        weight: NodeId,
        x: NodeId,
        bias_row: NodeId,
    ) -> Result<NodeId> {
        let wt = g.transpose(weight);
        let xw = g.matmul(x, wt)?;
        g.add_row(xw, bias_row)
    }

    /// `log(trace(cov(Uᵀa⁽ⁱ⁾)) + eps)` as a graph node.
    pub fn regularizer_graph(&self, g: &mut Graph<T>, nodes: MultiBiasNodes, eps: T) -> Result<NodeId> {
        let a = self.num_biases();
        if a < 2 {
            return Err(Error::contract(format!(
                "bias regularizer needs at least 2 biases, got {a}"
            )));
        }
        let codes = g.matmul(nodes.biases, nodes.weight)?;
        let mean = g.mean_rows(codes);
        let neg_mean = g.scale(mean, -T::one());
        let centered = g.add_row(codes, neg_mean)?;
        let sq = g.square(centered);
        let total = g.sum(sq);
        let tr = g.scale(total, T::one() / T::c((a - 1) as f64));
        let shifted = g.add_scalar(tr, eps);
        Ok(g.log(shifted))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn padded_identity() -> Tensor<f64> {
        Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_bias_embeds_input() {
        let layer = MultiBiasLinear::new(padded_identity(), Tensor::zeros(&[2, 3])).unwrap();
        let y = layer.forward(&Tensor::vector(vec![0.4, -1.5]), 0).unwrap();
        assert_eq!(y.data(), &[0.4, -1.5, 0.0]);
    }

    #[test]
    fn normal_bias_difference_keeps_tangential_part() {
        let biases = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.0, 0.1, 0.2, 5.0]).unwrap();
        let layer = MultiBiasLinear::new(padded_identity(), biases).unwrap();
        let z = Tensor::vector(vec![0.7, 0.3]);
        let y0 = layer.forward(&z, 0).unwrap();
        let y1 = layer.forward(&z, 1).unwrap();
        assert_eq!(&y0.data()[..2], &y1.data()[..2]);
        assert_eq!(layer.invert(&y0).unwrap(), layer.invert(&y1).unwrap());
    }

    #[test]
    fn forward_matches_matmul_add() {
        let mut rng = seeded(1);
        let layer = MultiBiasLinear::<f64>::init(3, 7, 4, 0.5, &mut rng).unwrap();
        let z = Tensor::randn(&[3], 1.0, &mut rng);
        for i in 0..4 {
            let y = layer.forward(&z, i).unwrap();
            let oracle = layer.weight().matmul(&z).unwrap().add(&layer.bias(i)).unwrap();
            assert!(y.max_abs_diff(&oracle) < 1e-12);
        }
    }

    #[test]
    fn index_out_of_range() {
        let layer = MultiBiasLinear::new(padded_identity(), Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(
            layer.forward(&Tensor::vector(vec![0.0, 0.0]), 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn construction_contracts() {
        let square = Tensor::<f64>::identity(2);
        assert!(MultiBiasLinear::new(square, Tensor::zeros(&[1, 2])).is_err());
        let rank_one = Tensor::matrix(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        assert!(matches!(
            MultiBiasLinear::new(rank_one, Tensor::zeros(&[1, 3])),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn orthonormal_aligned_round_trip() {
        let biases = Tensor::matrix(3, 3, vec![0.5, -0.2, 1.0, 0.5, -0.2, -2.0, 0.5, -0.2, 0.0]).unwrap();
        let layer = MultiBiasLinear::new(padded_identity(), biases).unwrap();
        let z = Tensor::vector(vec![1.25, -0.5]);
        for i in 0..3 {
            let back = layer.invert(&layer.forward(&z, i).unwrap()).unwrap();
            assert!(back.max_abs_diff(&z) < 1e-15);
        }
    }

    #[test]
    fn normal_displacement_is_eliminated() {
        let mut rng = seeded(2);
        let mut layer = MultiBiasLinear::<f64>::init(2, 5, 3, 0.3, &mut rng).unwrap();
        layer.align_tangential().unwrap();
        let projector = layer.solver().unwrap().projector();
        let z = Tensor::randn(&[2], 1.0, &mut rng);
        let y = layer.forward(&z, 1).unwrap();
        let r = Tensor::<f64>::randn(&[5], 1.0, &mut rng);
        let normal = r.sub(&projector.matmul(&r).unwrap()).unwrap();
        let displaced = y.add(&normal).unwrap();
        let a = layer.invert(&y).unwrap();
        let b = layer.invert(&displaced).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
        assert!(a.max_abs_diff(&z) < 1e-10);
    }

    #[test]
    fn random_aligned_round_trip() {
        let mut rng = seeded(3);
        let mut layer = MultiBiasLinear::<f64>::init(4, 9, 5, 1.0, &mut rng).unwrap();
        layer.align_tangential().unwrap();
        assert!(layer.alignment_residual() < 1e-20);
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let z = Tensor::randn(&[4], 1.0, &mut rng);
            let y = layer.forward(&z, k % 5).unwrap();
            worst = worst.max(layer.invert(&y).unwrap().max_abs_diff(&z));
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn bias_gradient_isolation() {
        let mut rng = seeded(4);
        let layer = MultiBiasLinear::<f64>::init(2, 4, 3, 0.1, &mut rng).unwrap();
        let mut g = Graph::new();
        let nodes = layer.bind(&mut g, true);
        let x = g.constant(Tensor::randn(&[5, 2], 1.0, &mut rng));
        let y = layer.forward_graph(&mut g, nodes, x, &[1; 5]).unwrap();
        let sq = g.square(y);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        let gb = grads.get(nodes.biases).unwrap();
        assert!(gb.row(0).iter().chain(gb.row(2)).all(|&v| v == 0.0));
        assert!(gb.row(1).iter().any(|&v| v != 0.0));
    }

    proptest! {
        #[test]
        fn equal_tangential_parts_invert_together(seed in 0u64..5000, eps_exp in 3i32..9) {
            let mut rng = seeded(seed);
            let mut layer = MultiBiasLinear::<f64>::init(3, 6, 2, 0.5, &mut rng).unwrap();
            // Keep the Gram spectrum at or above 1 so ε in code space bounds ε in z-space.
            let lam_min = layer.solver().unwrap().gram_eigen().min();
            let boost = (1.0 / lam_min).sqrt().max(1.0);
            *layer.weight_mut() = layer.weight().scale(boost);
            layer.align_tangential().unwrap();
            let eps = 10f64.powi(-eps_exp);
            // Perturb bias 1 tangentially by at most eps in Uᵀ-projected norm.
            let u = layer.weight().clone();
            let dir = Tensor::<f64>::randn(&[3], 1.0, &mut rng);
            let dir = dir.scale(1.0 / dir.norm());
            let solver = layer.solver().unwrap();
            let shift = u.matmul(&solver.solve_gram(dir.data())).unwrap();
            let shift_code = transpose_apply(&u, shift.data()).unwrap();
            let shift = shift.scale(eps / shift_code.norm());
            for (a, s) in layer.biases_mut().row_mut(1).iter_mut().zip(shift.data()) {
                *a += *s;
            }
            let z = Tensor::randn(&[3], 1.0, &mut rng);
            let a = layer.invert(&layer.forward(&z, 0).unwrap()).unwrap();
            let b = layer.invert(&layer.forward(&z, 1).unwrap()).unwrap();
            prop_assert!(a.max_abs_diff(&b) < 10.0 * eps);
        }
    }
}
