//! Layer stack of multi-bias linear layers, batch norms and activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{
    Activation, BatchNorm, BatchNormNodes, BatchStats, BnMode, MultiBiasLinear, MultiBiasNodes,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum GenLayer<T> {
    MultiBias(MultiBiasLinear<T>),
    BatchNorm(BatchNorm<T>),
    Activation(Activation),
}

/// Shape of a fully-connected generator: every hidden block is
/// multi-bias linear → batch norm → leaky ReLU, the output block is
/// multi-bias linear → tanh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub d_z: usize,
    pub hidden: Vec<usize>,
    pub d_x: usize,
    pub num_biases: usize,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default = "default_bias_sd")]
    pub bias_sd: f64,
}

fn default_slope() -> f64 {
    0.2
}

fn default_bias_sd() -> f64 {
    crate::layers::DEFAULT_BIAS_SD
}

/// Batch statistics of one batch-norm layer, keyed by layer position.
pub type LayerStats<T> = (usize, BatchStats<T>);

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    layers: Vec<GenLayer<T>>,
}

#[derive(Debug, Clone, Copy)]
pub enum GenLayerNodes {
    MultiBias(MultiBiasNodes),
    BatchNorm(BatchNormNodes),
    Activation,
}

/// Graph handles for every parameter of a bound generator, in layer order.
#[derive(Debug, Clone)]
pub struct GenBinding {
    pub layers: Vec<GenLayerNodes>,
}

impl GenBinding {
    /// Parameter nodes in the same order as [`Generator::params_mut`].
    pub fn params(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                GenLayerNodes::MultiBias(n) => {
                    out.push(n.weight);
                    out.push(n.biases);
                }
                GenLayerNodes::BatchNorm(n) => {
                    out.push(n.gamma);
                    out.push(n.beta);
                }
                GenLayerNodes::Activation => {}
            }
        }
        out
    }
}

/// Output of a batched generator pass.
#[derive(Debug, Clone)]
pub struct GenPass<T> {
    pub output: NodeId,
    /// `(layer index, statistics)` for each batch norm run in training mode.
    pub batch_stats: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(layers: Vec<GenLayer<T>>) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut num_biases: Option<usize> = None;
        for (k, layer) in layers.iter().enumerate() {
            match layer {
                GenLayer::MultiBias(m) => {
                    if let Some(w) = width {
                        if w != m.d_in() {
                            return Err(Error::contract(format!(
                                "layer {k} expects width {} but receives {w}",
                                m.d_in()
                            )));
                        }
                    }
                    if let Some(a) = num_biases {
                        if a != m.num_biases() {
                            return Err(Error::contract(format!(
                                "layer {k} has {} biases, earlier layers have {a}",
                                m.num_biases()
                            )));
                        }
                    }
                    width = Some(m.d_out());
                    num_biases = Some(m.num_biases());
                }
                GenLayer::BatchNorm(bn) => match width {
                    Some(w) if w == bn.dim() => {}
                    _ => {
                        return Err(Error::contract(format!(
                            "batch norm at layer {k} has width {} but input width is {width:?}",
                            bn.dim()
                        )))
                    }
                },
                GenLayer::Activation(_) => {
                    if width.is_none() {
                        return Err(Error::contract("generator must start with a multi-bias layer"));
                    }
                }
            }
        }
        if num_biases.is_none() {
            return Err(Error::contract("generator has no multi-bias layer"));
        }
        if !matches!(layers.last(), Some(GenLayer::Activation(Activation::Tanh))) {
            return Err(Error::contract("generator stack must end with tanh"));
        }
        Ok(Self { layers })
    }

    pub fn mlp<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        let act = Activation::leaky_relu(spec.slope)?;
        let mut layers = Vec::new();
        let mut prev = spec.d_z;
        for &h in &spec.hidden {
            layers.push(GenLayer::MultiBias(MultiBiasLinear::init(
                prev,
                h,
                spec.num_biases,
                spec.bias_sd,
                rng,
            )?));
            layers.push(GenLayer::BatchNorm(BatchNorm::new(h)));
            layers.push(GenLayer::Activation(act));
            prev = h;
        }
        layers.push(GenLayer::MultiBias(MultiBiasLinear::init(
            prev,
            spec.d_x,
            spec.num_biases,
            spec.bias_sd,
            rng,
        )?));
        layers.push(GenLayer::Activation(Activation::Tanh));
        Self::new(layers)
    }

    pub fn layers(&self) -> &[GenLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [GenLayer<T>] {
        &mut self.layers
    }

    pub fn d_z(&self) -> usize {
        self.multi_bias_layers().next().expect("validated").d_in()
    }

    pub fn d_x(&self) -> usize {
        self.multi_bias_layers().last().expect("validated").d_out()
    }

    pub fn num_biases(&self) -> usize {
        self.multi_bias_layers().next().expect("validated").num_biases()
    }

    pub fn multi_bias_layers(&self) -> impl Iterator<Item = &MultiBiasLinear<T>> {
        self.layers.iter().filter_map(|l| match l {
            GenLayer::MultiBias(m) => Some(m),
            _ => None,
        })
    }

    pub fn multi_bias_layers_mut(&mut self) -> impl Iterator<Item = &mut MultiBiasLinear<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            GenLayer::MultiBias(m) => Some(m),
            _ => None,
        })
    }

    /// Number of multi-bias layers (L).
    pub fn depth(&self) -> usize {
        self.multi_bias_layers().count()
    }

    /// Inference-mode forward of one latent code through bias `i` of every layer.
    pub fn forward(&self, z: &Tensor<T>, i: usize) -> Result<Tensor<T>> {
        if i >= self.num_biases() {
            return Err(Error::contract(format!(
                "bias index {i} out of range for {} biases",
                self.num_biases()
            )));
        }
        let biases: Vec<Tensor<T>> = self.multi_bias_layers().map(|m| m.bias(i)).collect();
        self.forward_with_biases(z, &biases)
    }

    /// Inference-mode forward with one explicit bias vector per multi-bias layer.
    pub fn forward_with_biases(&self, z: &Tensor<T>, biases: &[Tensor<T>]) -> Result<Tensor<T>> {
        if biases.len() != self.depth() {
            return Err(Error::contract(format!(
                "{} bias vectors for {} multi-bias layers",
                biases.len(),
                self.depth()
            )));
        }
        if z.numel() != self.d_z() {
            return Err(Error::Dimension {
                op: "generator forward",
                lhs: vec![self.d_z()],
                rhs: z.shape().to_vec(),
            });
        }
        let mut h = z.flatten();
        let mut l = 0;
        for layer in &self.layers {
            h = match layer {
                GenLayer::MultiBias(m) => {
                    if biases[l].numel() != m.d_out() {
                        return Err(Error::Dimension {
                            op: "generator bias",
                            lhs: vec![m.d_out()],
                            rhs: biases[l].shape().to_vec(),
                        });
                    }
                    let out = m.weight().matmul(&h)?.add(&biases[l].flatten())?;
                    l += 1;
                    out
                }
                GenLayer::BatchNorm(bn) => bn.forward_eval(&h)?,
                GenLayer::Activation(a) => a.forward(&h),
            };
        }
        Ok(h)
    }

    /// Closed-form inverse through the recovered encoders (mean bias per layer)
    /// with inference-mode batch norm.
    pub fn invert(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.numel() != self.d_x() {
            return Err(Error::Dimension {
                op: "generator invert",
                lhs: vec![self.d_x()],
                rhs: x.shape().to_vec(),
            });
        }
        let mut h = x.flatten();
        for layer in self.layers.iter().rev() {
            h = match layer {
                GenLayer::MultiBias(m) => m.invert(&h)?,
                GenLayer::BatchNorm(bn) => bn.invert(&h)?,
                GenLayer::Activation(a) => a.invert(&h),
            };
        }
        Ok(h)
    }

    /// Projects every layer's biases so their tangential parts coincide.
    pub fn align_biases(&mut self) -> Result<()> {
        for m in self.multi_bias_layers_mut() {
            m.align_tangential()?;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> GenBinding {
        GenBinding {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    GenLayer::MultiBias(m) => GenLayerNodes::MultiBias(m.bind(g, trainable)),
                    GenLayer::BatchNorm(bn) => GenLayerNodes::BatchNorm(bn.bind(g, trainable)),
                    GenLayer::Activation(_) => GenLayerNodes::Activation,
                })
                .collect(),
        }
    }

    /// Batched forward; row `k` of `z` is decoded through bias `indices[k]`.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        binding: &GenBinding,
        z: NodeId,
        indices: &[usize],
        mode: BnMode,
    ) -> Result<GenPass<T>> {
        let mut h = z;
        let mut batch_stats = Vec::new();
        for (k, (layer, nodes)) in self.layers.iter().zip(&binding.layers).enumerate() {
            h = match (layer, nodes) {
                (GenLayer::MultiBias(m), GenLayerNodes::MultiBias(n)) => {
                    m.forward_graph(g, *n, h, indices)?
                }
                (GenLayer::BatchNorm(bn), GenLayerNodes::BatchNorm(n)) => {
                    let (out, stats) = bn.forward_graph(g, *n, h, mode)?;
                    if let Some(s) = stats {
                        batch_stats.push((k, s));
                    }
                    out
                }
                (GenLayer::Activation(a), GenLayerNodes::Activation) => a.forward_graph(g, h),
                _ => return Err(Error::contract("binding does not match generator layers")),
            };
        }
        Ok(GenPass {
            output: h,
            batch_stats,
        })
    }

    /// Batched forward without gradients.
    pub fn forward_batch(&self, z: &Tensor<T>, indices: &[usize], mode: BnMode) -> Result<(Tensor<T>, Vec<LayerStats<T>>)> {
        let mut g = Graph::new();
        let binding = self.bind(&mut g, false);
        let zn = g.constant(z.clone());
        let pass = self.forward_graph(&mut g, &binding, zn, indices, mode)?;
        Ok((g.value(pass.output).clone(), pass.batch_stats))
    }

    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats<T>)]) {
        for (k, s) in stats {
            if let GenLayer::BatchNorm(bn) = &mut self.layers[*k] {
                bn.update_running(s);
            }
        }
    }

    /// Every trainable tensor, in binding order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                GenLayer::MultiBias(m) => {
                    let (w, b) = m.parts_mut();
                    out.push(w);
                    out.push(b);
                }
                GenLayer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                GenLayer::Activation(_) => {}
            }
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                GenLayer::MultiBias(m) => {
                    out.push(m.weight().shape().to_vec());
                    out.push(m.biases().shape().to_vec());
                }
                GenLayer::BatchNorm(bn) => {
                    out.push(bn.gamma.shape().to_vec());
                    out.push(bn.beta.shape().to_vec());
                }
                GenLayer::Activation(_) => {}
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    GenLayer::MultiBias(m) => GenLayer::MultiBias(m.cast()),
                    GenLayer::BatchNorm(bn) => GenLayer::BatchNorm(BatchNorm {
                        gamma: bn.gamma.cast(),
                        beta: bn.beta.cast(),
                        running_mean: bn.running_mean.cast(),
                        running_var: bn.running_var.cast(),
                        epsilon: bn.epsilon,
                        momentum: bn.momentum,
                    }),
                    GenLayer::Activation(a) => GenLayer::Activation(*a),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    pub(crate) fn small_spec() -> MlpSpec {
        MlpSpec {
            d_z: 3,
            hidden: vec![8],
            d_x: 12,
            num_biases: 4,
            slope: 0.2,
            bias_sd: 0.5,
        }
    }

    #[test]
    fn mlp_layout() {
        let gen = Generator::<f64>::mlp(&small_spec(), &mut seeded(1)).unwrap();
        assert_eq!(gen.layers().len(), 5);
        assert_eq!((gen.d_z(), gen.d_x(), gen.num_biases(), gen.depth()), (3, 12, 4, 2));
    }

    #[test]
    fn rejects_missing_tanh_and_mismatched_biases() {
        let mut rng = seeded(2);
        let m = MultiBiasLinear::<f64>::init(2, 4, 3, 0.1, &mut rng).unwrap();
        assert!(Generator::new(vec![GenLayer::MultiBias(m.clone())]).is_err());
        let m2 = MultiBiasLinear::<f64>::init(4, 6, 2, 0.1, &mut rng).unwrap();
        assert!(Generator::new(vec![
            GenLayer::MultiBias(m),
            GenLayer::MultiBias(m2),
            GenLayer::Activation(Activation::Tanh)
        ])
        .is_err());
    }

    #[test]
    fn graph_forward_matches_vector_forward() {
        let mut rng = seeded(3);
        let mut gen = Generator::<f64>::mlp(&small_spec(), &mut rng).unwrap();
        if let GenLayer::BatchNorm(bn) = &mut gen.layers_mut()[1] {
            bn.running_mean = Tensor::randn(&[8], 0.3, &mut rng);
            bn.running_var = Tensor::full(&[8], 2.0);
        }
        let z = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let idx = [0, 3, 1, 2];
        let (batch, stats) = gen.forward_batch(&z, &idx, BnMode::Eval).unwrap();
        assert!(stats.is_empty());
        for (k, &i) in idx.iter().enumerate() {
            let single = gen.forward(&Tensor::vector(z.row(k).to_vec()), i).unwrap();
            assert!(single.max_abs_diff(&Tensor::vector(batch.row(k).to_vec())) < 1e-12);
        }
    }

    #[test]
    fn aligned_generator_inverts() {
        let mut rng = seeded(4);
        let mut gen = Generator::<f64>::mlp(&small_spec(), &mut rng).unwrap();
        gen.align_biases().unwrap();
        for k in 0..50 {
            let z = Tensor::randn(&[3], 1.0, &mut rng);
            let x = gen.forward(&z, k % 4).unwrap();
            assert!(gen.invert(&x).unwrap().max_abs_diff(&z) < 1e-8);
        }
    }
}
