//! Latent and bias recovery by distance minimization.
//!
//! Minimizes `‖x − f(z; {ã_l})‖² + μ Σ_l log(‖U_lᵀã_l − U_lᵀā_l‖² + ε)` over
//! `z` and one free bias vector per multi-bias layer, using Adam from several
//! starting points and keeping the best iterate seen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::BnMode;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::generator::{GenLayer, GenLayerNodes, Generator};
use crate::layers::MultiBiasLinear;
use super::regularizer::EPS_REG;
use super::sampling::LatentPrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeConfig {
    pub mu: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub max_steps: usize,
    /// Stop once the objective changed by less than `tolerance` (relative)
    /// over the last `window` steps.
    pub tolerance: f64,
    pub window: usize,
    /// Total number of starting points.
    pub restarts: usize,
    pub seed: u64,
    pub eps: f64,
    /// Learning-rate factor applied when the best objective has not improved
    /// for `patience` steps; 1 disables decay.
    pub lr_decay: f64,
    pub patience: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            max_steps: 2000,
            tolerance: 1e-6,
            window: 50,
            restarts: 8,
            seed: 0,
            eps: EPS_REG,
            lr_decay: 0.5,
            patience: 200,
        }
    }
}

/// Where an optimization run started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Start {
    /// `z = 0`, mean biases.
    Mean,
    /// `z = 0`, the trained bias tuple `index`.
    Bias { index: usize },
    /// Prior draw `draw`, mean biases.
    Random { draw: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: Start,
    /// Best objective reached, or `None` if the run diverged.
    pub objective: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeResult<T> {
    pub z: Tensor<T>,
    /// One recovered bias per multi-bias layer.
    pub biases: Vec<Tensor<T>>,
    pub objective: f64,
    /// Squared L2 distance between the input and its regeneration.
    pub reconstruction_error: f64,
    /// Best-so-far objective per step of the winning run; non-increasing.
    pub trace: Vec<f64>,
    pub start: Start,
    pub outcomes: Vec<StartOutcome>,
}

impl<T: Scalar> EncodeResult<T> {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "z": self.z.to_f64_vec(),
            "biases": self.biases.iter().map(|b| b.to_f64_vec()).collect::<Vec<_>>(),
            "objective": self.objective,
            "reconstruction_error": self.reconstruction_error,
            "steps": self.trace.len(),
            "start": self.start,
            "starts": self.outcomes,
        })
    }
}

struct RunOutcome<T> {
    z: Tensor<T>,
    biases: Vec<Tensor<T>>,
    objective: f64,
    trace: Vec<f64>,
}

fn starts(num_biases: usize, restarts: usize) -> Vec<Start> {
    let mut out = vec![Start::Mean];
    out.extend((0..num_biases).map(|index| Start::Bias { index }));
    let mut draw = 0;
    while out.len() < restarts {
        out.push(Start::Random { draw });
        draw += 1;
    }
    out.truncate(restarts);
    out
}

pub(crate) fn validate_encode_config(config: &EncodeConfig) -> Result<()> {
    let mut problems = Vec::new();
    if !(config.mu >= 0.0) {
        problems.push("encode.mu must be nonnegative".to_string());
    }
    if !(config.lr > 0.0) {
        problems.push("encode.lr must be positive".to_string());
    }
    if config.max_steps == 0 {
        problems.push("encode.max_steps must be positive".to_string());
    }
    if config.patience == 0 {
        problems.push("encode.patience must be positive".to_string());
    }
    if config.window == 0 {
        problems.push("encode.window must be positive".to_string());
    }
    if config.restarts == 0 {
        problems.push("encode.restarts must be positive".to_string());
    }
    if !(config.lr_decay > 0.0 && config.lr_decay <= 1.0) {
        problems.push("encode.lr_decay must lie in (0, 1]".to_string());
    }
    if !(config.eps > 0.0) {
        problems.push("encode.eps must be positive".to_string());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

/// Per-layer coordinates for the free bias: `ã = ā + W c + Q n` with
/// `W = U(UᵀU)⁻¹` and `Q = I − UWᵀ`, so that `Uᵀã − Uᵀā = c`. The optimizer
/// works on `s` with `c = √ε·sinh(s)`, which turns the sharp well of
/// `log(‖c‖² + ε)` into a smooth bowl without changing the objective.
struct Frame<T> {
    mean: Tensor<T>,
    /// `Wᵀ`, `[d_in × d_out]`.
    wt: Tensor<T>,
    /// Normal-space projector, `[d_out × d_out]`, symmetric.
    q: Tensor<T>,
}

impl<T: Scalar> Frame<T> {
    fn new(m: &MultiBiasLinear<T>) -> Result<Self> {
        let solver = m.solver()?;
        let eye = Tensor::identity(m.d_out());
        Ok(Self {
            mean: m.mean_bias(),
            wt: solver.pseudo_inverse_transpose().transpose(),
            q: eye.sub(&solver.projector())?,
        })
    }

    fn split(&self, bias: &Tensor<T>, u: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Tensor<T>)> {
        let delta = bias.flatten().sub(&self.mean)?;
        let root = T::c(eps.sqrt());
        let s = u.transpose().matmul(&delta)?.map(|c| (c / root).asinh());
        Ok((s, self.q.matmul(&delta)?))
    }

    fn join(&self, s: &Tensor<T>, n: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let root = T::c(eps.sqrt());
        let c = s.flatten().map(|v| root * v.sinh());
        let wc = self.wt.transpose().matmul(&c)?;
        self.mean.add(&wc)?.add(&self.q.matmul(&n.flatten())?)
    }
}

/// Objective value and gradients for `params = [z, s_0, n_0, s_1, n_1, ...]`.
fn objective<T: Scalar>(
    gen: &Generator<T>,
    frames: &[Frame<T>],
    x: &Tensor<T>,
    params: &[Tensor<T>],
    config: &EncodeConfig,
    want_grad: bool,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let binding = gen.bind(&mut g, false);
    let leaves: Vec<NodeId> = params.iter().map(|p| g.leaf(p.as_row())).collect();
    let mut h = leaves[0];
    let mut l = 0;
    let mut penalty: Option<NodeId> = None;
    for (layer, nodes) in gen.layers().iter().zip(&binding.layers) {
        h = match (layer, nodes) {
            (GenLayer::MultiBias(m), GenLayerNodes::MultiBias(n)) => {
                let frame = &frames[l];
                let (sn, nn) = (leaves[1 + 2 * l], leaves[2 + 2 * l]);
                let sinh = g.sinh(sn);
                let c = g.scale(sinh, T::c(config.eps.sqrt()));
                let wt = g.constant(frame.wt.clone());
                let q = g.constant(frame.q.clone());
                let mean = g.constant(frame.mean.as_row());
                let tangential = g.matmul(c, wt)?;
                let normal = g.matmul(nn, q)?;
                let offset = g.add(tangential, normal)?;
                let bias = g.add(mean, offset)?;
                let out = m.forward_graph_with_bias(&mut g, n.weight, h, bias)?;
                let sq = g.square(c);
                let dist = g.sum(sq);
                let shifted = g.add_scalar(dist, T::c(config.eps));
                let term = g.log(shifted);
                penalty = Some(match penalty {
                    Some(p) => g.add(p, term)?,
                    None => term,
                });
                l += 1;
                out
            }
            (GenLayer::BatchNorm(bn), GenLayerNodes::BatchNorm(n)) => {
                bn.forward_graph(&mut g, *n, h, BnMode::Eval)?.0
            }
            (GenLayer::Activation(a), GenLayerNodes::Activation) => a.forward_graph(&mut g, h),
            _ => return Err(Error::contract("binding does not match generator layers")),
        };
    }
    let target = g.constant(x.scale(-T::one()).as_row());
    let resid = g.add(h, target)?;
    let sq = g.square(resid);
    let mut loss = g.sum(sq);
    if config.mu != 0.0 {
        if let Some(p) = penalty {
            let weighted = g.scale(p, T::c(config.mu));
            loss = g.add(loss, weighted)?;
        }
    }
    let value = g.scalar_value(loss).f64();
    if !want_grad || !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    let grads = leaves
        .iter()
        .zip(params)
        .map(|(id, p)| grads.get_or_zeros(*id, g.value(*id)).reshape(p.shape()))
        .collect::<Result<_>>()?;
    Ok((value, grads))
}

/// A converged start (objective, parameters, objective trace), or the trace
/// of a diverged one.
type StartRun<T> = std::result::Result<(f64, Vec<Tensor<T>>, Vec<f64>), Vec<f64>>;

fn run<T: Scalar>(
    gen: &Generator<T>,
    frames: &[Frame<T>],
    x: &Tensor<T>,
    mut params: Vec<Tensor<T>>,
    config: &EncodeConfig,
) -> Result<StartRun<T>> {
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: 1e-8,
        },
        &shapes,
    );
    let mut best: Option<(f64, Vec<Tensor<T>>)> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut raw: Vec<f64> = Vec::new();
    let mut initial = None;
    let mut lr = config.lr;
    let mut since_best = 0;
    let mut phase_best: Option<f64> = None;
    let floor = config.mu * frames.len() as f64 * config.eps.ln();
    for step in 0..=config.max_steps {
        let last = step == config.max_steps;
        let (value, grads) = objective(gen, frames, x, &params, config, !last)?;
        let init = *initial.get_or_insert(value);
        if !value.is_finite() || value - init > 10.0 * init.abs() {
            trace.push(value);
            return Ok(Err(trace));
        }
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, params.clone()));
        }
        trace.push(best.as_ref().expect("set above").0);
        if last {
            break;
        }
        // Plateau detection is local to the current step size.
        if step > 0 && phase_best.is_none_or(|b| value < b) {
            phase_best = Some(value);
            since_best = 0;
        } else if step > 0 {
            since_best += 1;
            if since_best >= config.patience {
                lr *= config.lr_decay;
                since_best = 0;
                phase_best = None;
                raw.clear();
            }
        }
        raw.push(value);
        if raw.len() > config.window {
            // Relative to the objective's lower bound, `μ·L·log ε`.
            let old = raw[raw.len() - 1 - config.window] - floor;
            if (old - (value - floor)).abs() <= config.tolerance * old.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        let mut refs: Vec<&mut Tensor<T>> = params.iter_mut().collect();
        adam.update(&mut refs, &grads, lr);
    }
    let (objective, params) = best.expect("at least one evaluation");
    Ok(Ok((objective, params, trace)))
}

/// Recovers `(z, {ã_l})` for a single sample `x`.
pub fn encode<T: Scalar>(gen: &Generator<T>, x: &Tensor<T>, config: &EncodeConfig) -> Result<EncodeResult<T>> {
    validate_encode_config(config)?;
    if x.numel() != gen.d_x() {
        return Err(Error::Dimension {
            op: "encode",
            lhs: vec![gen.d_x()],
            rhs: x.shape().to_vec(),
        });
    }
    if x.data().iter().any(|v| !v.is_finite() || v.abs() > T::one()) {
        return Err(Error::contract("encode input must lie in [-1, 1]"));
    }
    let x = x.flatten();
    let layers: Vec<&MultiBiasLinear<T>> = gen.multi_bias_layers().collect();
    let frames: Vec<Frame<T>> = layers.iter().map(|m| Frame::new(m)).collect::<Result<_>>()?;
    let means: Vec<Tensor<T>> = frames.iter().map(|f| f.mean.clone()).collect();
    let prior = LatentPrior { d_z: gen.d_z() };

    let mut outcomes = Vec::new();
    let mut winner: Option<(Start, RunOutcome<T>)> = None;
    let mut last_trace = Vec::new();
    for start in starts(gen.num_biases(), config.restarts) {
        let (z0, b0) = match start {
            Start::Mean => (Tensor::zeros(&[gen.d_z()]), means.clone()),
            Start::Bias { index } => (
                Tensor::zeros(&[gen.d_z()]),
                gen.multi_bias_layers().map(|m| m.bias(index)).collect(),
            ),
            Start::Random { draw } => {
                let mut rng = stream_rng(config.seed, Stream::Encode, draw as u64);
                (prior.draw(1, &mut rng).flatten(), means.clone())
            }
        };
        let mut params = vec![z0];
        for ((frame, m), b) in frames.iter().zip(&layers).zip(&b0) {
            let (c, n) = frame.split(b, m.weight(), config.eps)?;
            params.push(c);
            params.push(n);
        }
        match run(gen, &frames, &x, params, config)? {
            Ok((objective, params, trace)) => {
                outcomes.push(StartOutcome {
                    start,
                    objective: Some(objective),
                    steps: trace.len(),
                });
                if winner.as_ref().is_none_or(|(_, w)| objective < w.objective) {
                    let biases = frames
                        .iter()
                        .enumerate()
                        .map(|(l, f)| f.join(&params[1 + 2 * l], &params[2 + 2 * l], config.eps))
                        .collect::<Result<_>>()?;
                    winner = Some((
                        start,
                        RunOutcome {
                            z: params[0].clone(),
                            biases,
                            objective,
                            trace,
                        },
                    ));
                }
            }
            Err(trace) => {
                outcomes.push(StartOutcome {
                    start,
                    objective: None,
                    steps: trace.len(),
                });
                last_trace = trace;
            }
        }
    }
    let Some((start, best)) = winner else {
        return Err(Error::OptimizationFailure {
            reason: "every encoding start diverged".into(),
            trace: last_trace,
        });
    };
    let recon = gen.forward_with_biases(&best.z, &best.biases)?;
    let reconstruction_error = recon.sub(&x)?.norm_sq().f64();
    Ok(EncodeResult {
        z: best.z,
        biases: best.biases,
        objective: best.objective,
        reconstruction_error,
        trace: best.trace,
        start,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transfer<T> {
    pub output: Tensor<T>,
    pub source: EncodeResult<T>,
    pub target: EncodeResult<T>,
}

/// Regenerates with the target's latent code and the source's recovered biases.
pub fn style_transfer<T: Scalar>(
    gen: &Generator<T>,
    source: &Tensor<T>,
    target: &Tensor<T>,
    config: &EncodeConfig,
) -> Result<Transfer<T>> {
    let source = encode(gen, source, config)?;
    let target = encode(gen, target, config)?;
    let output = gen.forward_with_biases(&target.z, &source.biases)?;
    Ok(Transfer { output, source, target })
}
