use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::BnMode;
use crate::linalg::{sym_eigen, RANK_TOLERANCE};
use crate::model::{sampling::LatentPrior, Generator};
use crate::tensor::Tensor;

/// A differentiable map from latent to data space, evaluated on a `[1 × d_z]` row.
pub trait LatentMap {
    fn d_z(&self) -> usize;
    fn forward_graph(&self, g: &mut Graph<f64>, z: NodeId) -> Result<NodeId>;

    fn forward(&self, z: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let zn = g.constant(z.as_row());
        let out = self.forward_graph(&mut g, zn)?;
        Ok(g.value(out).flatten())
    }
}

/// The generator restricted to one bias index, inference-mode batch norm.
pub struct GeneratorMap<'a> {
    pub generator: &'a Generator<f64>,
    pub index: usize,
}

impl LatentMap for GeneratorMap<'_> {
    fn d_z(&self) -> usize {
        self.generator.d_z()
    }

    fn forward_graph(&self, g: &mut Graph<f64>, z: NodeId) -> Result<NodeId> {
        if self.index >= self.generator.num_biases() {
            return Err(Error::contract(format!("bias index {} out of range", self.index)));
        }
        let binding = self.generator.bind(g, false);
        Ok(self.generator.forward_graph(g, &binding, z, &[self.index], BnMode::Eval)?.output)
    }
}

/// Any map expressed as graph operations.
pub struct GraphMap<F> {
    pub d_z: usize,
    pub f: F,
}

impl<F: Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>> LatentMap for GraphMap<F> {
    fn d_z(&self) -> usize {
        self.d_z
    }

    fn forward_graph(&self, g: &mut Graph<f64>, z: NodeId) -> Result<NodeId> {
        (self.f)(g, z)
    }
}

/// `J = ∂f/∂z` as `[d_x × d_z]`, one reverse pass per output coordinate.
pub fn autodiff_jacobian(map: &impl LatentMap, z: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let zn = g.leaf(z.as_row());
    let out = map.forward_graph(&mut g, zn)?;
    let d_x = g.value(out).numel();
    let d_z = map.d_z();
    let shape = g.value(out).shape().to_vec();
    let mut jac = Tensor::zeros(&[d_x, d_z]);
    for j in 0..d_x {
        let sel = g.constant(Tensor::from_fn(&shape, |k| if k == j { 1.0 } else { 0.0 }));
        let picked = g.mul(out, sel)?;
        let s = g.sum(picked);
        let grads = g.backward(s)?;
        let row = grads.get_or_zeros(zn, g.value(zn));
        jac.row_mut(j).copy_from_slice(row.data());
    }
    Ok(jac)
}

/// Central differences with step `h`.
pub fn finite_difference_jacobian(map: &impl LatentMap, z: &Tensor<f64>, h: f64) -> Result<Tensor<f64>> {
    let z = z.flatten();
    let d_z = z.numel();
    let base = map.forward(&z)?;
    let mut jac = Tensor::zeros(&[base.numel(), d_z]);
    for k in 0..d_z {
        let mut plus = z.clone();
        plus.data_mut()[k] += h;
        let mut minus = z.clone();
        minus.data_mut()[k] -= h;
        let diff = map.forward(&plus)?.sub(&map.forward(&minus)?)?;
        for j in 0..base.numel() {
            jac.set(j, k, diff.data()[j] / (2.0 * h));
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Value { density: f64, log_density: f64 },
    /// `JᵀJ` is singular at this latent point.
    Undefined,
}

impl Density {
    pub fn value(self) -> Option<f64> {
        match self {
            Density::Value { density, .. } => Some(density),
            Density::Undefined => None,
        }
    }
}

/// `p(z) / √det(JᵀJ)` at `x = f(z)`.
pub fn pushforward_density(map: &impl LatentMap, z: &Tensor<f64>) -> Result<Density> {
    if z.numel() != map.d_z() {
        return Err(Error::Dimension {
            op: "pushforward density",
            lhs: vec![map.d_z()],
            rhs: z.shape().to_vec(),
        });
    }
    let jac = autodiff_jacobian(map, z)?;
    let jtj = jac.transpose().matmul(&jac)?;
    let eig = sym_eigen(&jtj)?;
    let (max, min) = (eig.max(), eig.min());
    if !(max > 0.0) || min <= RANK_TOLERANCE * max {
        return Ok(Density::Undefined);
    }
    let log_det: f64 = eig.values.data().iter().map(|l| l.ln()).sum();
    let log_density = LatentPrior { d_z: map.d_z() }.log_pdf(z.data()) - 0.5 * log_det;
    Ok(Density::Value {
        density: log_density.exp(),
        log_density,
    })
}
