//! Spectrally normalized MLP critic.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{Activation, SpectralNodes, SpectralNormLinear};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum DiscLayer<T> {
    Linear(SpectralNormLinear<T>),
    Activation(Activation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    layers: Vec<DiscLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct DiscBinding {
    pub linears: Vec<SpectralNodes>,
}

impl DiscBinding {
    pub fn params(&self) -> Vec<NodeId> {
        self.linears.iter().flat_map(|n| [n.weight, n.bias]).collect()
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(layers: Vec<DiscLayer<T>>) -> Result<Self> {
        let mut width: Option<usize> = None;
        for layer in &layers {
            if let DiscLayer::Linear(l) = layer {
                if let Some(w) = width {
                    if w != l.d_in() {
                        return Err(Error::contract(format!(
                            "critic layer expects width {} but receives {w}",
                            l.d_in()
                        )));
                    }
                }
                width = Some(l.d_out());
            }
        }
        match width {
            Some(1) => Ok(Self { layers }),
            other => Err(Error::contract(format!(
                "critic must end in a single output, got width {other:?}"
            ))),
        }
    }

    /// Linear → LReLU blocks for each hidden width, then a linear map to one output.
    pub fn mlp<R: Rng + ?Sized>(d_x: usize, hidden: &[usize], slope: f64, rng: &mut R) -> Result<Self> {
        let act = Activation::leaky_relu(slope)?;
        let mut layers = Vec::new();
        let mut prev = d_x;
        for &h in hidden {
            layers.push(DiscLayer::Linear(SpectralNormLinear::init(prev, h, rng)));
            layers.push(DiscLayer::Activation(act));
            prev = h;
        }
        layers.push(DiscLayer::Linear(SpectralNormLinear::init(prev, 1, rng)));
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DiscLayer<T>] {
        &self.layers
    }

    pub fn linears(&self) -> impl Iterator<Item = &SpectralNormLinear<T>> {
        self.layers.iter().filter_map(|l| match l {
            DiscLayer::Linear(s) => Some(s),
            _ => None,
        })
    }

    pub fn linears_mut(&mut self) -> impl Iterator<Item = &mut SpectralNormLinear<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            DiscLayer::Linear(s) => Some(s),
            _ => None,
        })
    }

    pub fn d_x(&self) -> usize {
        self.linears().next().expect("validated").d_in()
    }

    /// Advances every layer's power iteration by its configured count.
    pub fn power_iterate(&mut self) {
        for l in self.linears_mut() {
            let n = l.power_iterations;
            l.power_iterate(n);
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> DiscBinding {
        DiscBinding {
            linears: self.linears().map(|l| l.bind(g, trainable)).collect(),
        }
    }

    /// Critic values `[m × 1]` for a batch `x` `[m × d_x]`.
    pub fn forward_graph(&self, g: &mut Graph<T>, binding: &DiscBinding, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let mut k = 0;
        for layer in &self.layers {
            h = match layer {
                DiscLayer::Linear(l) => {
                    let out = l.forward_graph(g, binding.linears[k], h)?;
                    k += 1;
                    out
                }
                DiscLayer::Activation(a) => a.forward_graph(g, h),
            };
        }
        Ok(h)
    }

    /// Critic values for a batch, without gradients or state updates.
    pub fn evaluate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let binding = self.bind(&mut g, false);
        let xn = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &binding, xn)?;
        Ok(g.value(out).clone())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.linears_mut() {
            let SpectralNormLinear { weight, bias, .. } = l;
            out.push(weight);
            out.push(bias);
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.linears()
            .flat_map(|l| [l.weight.shape().to_vec(), l.bias.shape().to_vec()])
            .collect()
    }
}
