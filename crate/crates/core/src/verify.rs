//! Property suite: the tangential-variance inequality on random instances,
//! finite-difference gradient checks of every graph operation, and closed-form
//! inversion round trips.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::layers::{BatchNorm, BnMode, MultiBiasLinear, SpectralNormLinear};
use crate::model::{prop1_check, GenLayer, Generator, MlpSpec};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub const MARGIN_TOLERANCE: f64 = -1e-12;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
pub const INVERSION_TOLERANCE: f64 = 1e-6;

type Build = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>>;

/// Inputs of one differentiable operation and the function applying it.
pub struct GradInstance {
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

#[derive(Clone, Copy)]
enum Domain {
    Any,
    Positive,
    AwayFromZero,
}

fn draw(shape: &[usize], domain: Domain, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| match domain {
        Domain::Any => rng.random_range(-2.0..2.0),
        Domain::Positive => rng.random_range(0.5..2.0),
        Domain::AwayFromZero => {
            let m: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        }
    })
}

fn unary(
    shape: &'static [usize],
    domain: Domain,
    f: fn(&mut Graph<f64>, NodeId) -> NodeId,
) -> impl Fn(&mut ChaCha8Rng) -> GradInstance {
    move |rng| GradInstance {
        inputs: vec![draw(shape, domain, rng)],
        build: Box::new(move |g, x| Ok(f(g, x[0]))),
    }
}

fn binary(
    a: &'static [usize],
    b: &'static [usize],
    f: fn(&mut Graph<f64>, NodeId, NodeId) -> Result<NodeId>,
) -> impl Fn(&mut ChaCha8Rng) -> GradInstance {
    move |rng| GradInstance {
        inputs: vec![draw(a, Domain::Any, rng), draw(b, Domain::Any, rng)],
        build: Box::new(move |g, x| f(g, x[0], x[1])),
    }
}

fn unit(n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let v = draw(&[n], Domain::AwayFromZero, rng);
    v.scale(1.0 / v.norm())
}

pub type GradCase = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> GradInstance>);

/// Every differentiable graph operation, plus the composite layer graphs.
pub fn gradient_cases() -> Vec<GradCase> {
    let mut cases: Vec<GradCase> = vec![
        ("matmul", Box::new(binary(&[3, 4], &[4, 2], |g, a, b| g.matmul(a, b)))),
        ("transpose", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.transpose(a)))),
        ("add", Box::new(binary(&[3, 4], &[3, 4], |g, a, b| g.add(a, b)))),
        ("sub", Box::new(binary(&[3, 4], &[3, 4], |g, a, b| g.sub(a, b)))),
        ("mul", Box::new(binary(&[3, 4], &[3, 4], |g, a, b| g.mul(a, b)))),
        ("add_row", Box::new(binary(&[3, 4], &[4], |g, a, b| g.add_row(a, b)))),
        ("mul_row", Box::new(binary(&[3, 4], &[4], |g, a, b| g.mul_row(a, b)))),
        ("scale", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.scale(a, -1.7)))),
        ("add_scalar", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.add_scalar(a, 0.3)))),
        ("scale_by", Box::new(binary(&[3, 4], &[1], |g, a, s| g.scale_by(a, s)))),
        ("sum", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.sum(a)))),
        ("mean", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.mean(a)))),
        ("mean_rows", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.mean_rows(a)))),
        ("square", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.square(a)))),
        ("sqrt", Box::new(unary(&[3, 4], Domain::Positive, |g, a| g.sqrt(a)))),
        ("recip", Box::new(unary(&[3, 4], Domain::Positive, |g, a| g.recip(a)))),
        ("log", Box::new(unary(&[3, 4], Domain::Positive, |g, a| g.log(a)))),
        ("sinh", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.sinh(a)))),
        ("tanh", Box::new(unary(&[3, 4], Domain::Any, |g, a| g.tanh(a)))),
        (
            "leaky_relu",
            Box::new(unary(&[3, 4], Domain::AwayFromZero, |g, a| g.leaky_relu(a, 0.2))),
        ),
    ];
    cases.push((
        "gather_rows",
        Box::new(|rng: &mut ChaCha8Rng| {
            let idx: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
            GradInstance {
                inputs: vec![draw(&[4, 3], Domain::Any, rng)],
                build: Box::new(move |g, x| g.gather_rows(x[0], &idx)),
            }
        }),
    ));
    cases.push((
        "batch_norm_train",
        Box::new(|rng: &mut ChaCha8Rng| GradInstance {
            inputs: vec![
                draw(&[5, 3], Domain::Any, rng),
                draw(&[3], Domain::Any, rng),
                draw(&[3], Domain::Any, rng),
            ],
            build: Box::new(|g, x| {
                let bn = BatchNorm::<f64>::new(3);
                let nodes = crate::layers::BatchNormNodes { gamma: x[1], beta: x[2] };
                Ok(bn.forward_graph(g, nodes, x[0], BnMode::Train)?.0)
            }),
        }),
    ));
    cases.push((
        "multi_bias_linear",
        Box::new(|rng: &mut ChaCha8Rng| {
            let idx: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            GradInstance {
                inputs: vec![
                    draw(&[4, 2], Domain::Any, rng),
                    draw(&[5, 2], Domain::Any, rng),
                    draw(&[3, 5], Domain::Any, rng),
                ],
                build: Box::new(move |g, x| {
                    let m = MultiBiasLinear::new(g.value(x[1]).clone(), g.value(x[2]).clone())?;
                    let nodes = crate::layers::MultiBiasNodes { weight: x[1], biases: x[2] };
                    m.forward_graph(g, nodes, x[0], &idx)
                }),
            }
        }),
    ));
    cases.push((
        "bias_regularizer",
        Box::new(|rng: &mut ChaCha8Rng| GradInstance {
            inputs: vec![draw(&[5, 2], Domain::Any, rng), draw(&[3, 5], Domain::Any, rng)],
            build: Box::new(|g, x| {
                let m = MultiBiasLinear::new(g.value(x[0]).clone(), g.value(x[1]).clone())?;
                let nodes = crate::layers::MultiBiasNodes { weight: x[0], biases: x[1] };
                m.regularizer_graph(g, nodes, 1e-12)
            }),
        }),
    ));
    cases.push((
        "spectral_linear",
        Box::new(|rng: &mut ChaCha8Rng| {
            let x = draw(&[4, 3], Domain::Any, rng);
            let w = draw(&[2, 3], Domain::Any, rng);
            let b = draw(&[2], Domain::Any, rng);
            // One power-iteration half step, as in training, keeps uᵀWv > 0.
            let u = unit(2, rng);
            let wtu = w.transpose().matmul(&u).expect("shapes agree");
            let v = wtu.scale(1.0 / wtu.norm());
            GradInstance {
                inputs: vec![x, w, b],
                build: Box::new(move |g, x| {
                    let layer = SpectralNormLinear {
                        weight: g.value(x[1]).clone(),
                        bias: g.value(x[2]).clone(),
                        u: u.clone(),
                        v: v.clone(),
                        power_iterations: 1,
                    };
                    let nodes = crate::layers::SpectralNodes { weight: x[1], bias: x[2] };
                    layer.forward_graph(g, nodes, x[0])
                }),
            }
        }),
    ));
    cases
}

/// `Σ w ⊙ op(inputs)` with a fixed random weighting `w`, so every output
/// coordinate contributes to the checked gradient.
fn weighted_loss(inst: &GradInstance, weights: &Tensor<f64>, inputs: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<NodeId>, NodeId)> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = (inst.build)(&mut g, &ids)?;
    let w = g.constant(weights.clone().reshape(g.value(out).shape())?);
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod);
    Ok((g, ids, loss))
}

/// Largest relative error `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`
/// over the inputs, using central differences with step `h`.
pub fn check_gradient(inst: &GradInstance, h: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let out_shape = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inst.inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = (inst.build)(&mut g, &ids)?;
        g.value(out).shape().to_vec()
    };
    let weights = draw(&out_shape, Domain::Any, rng);
    let (g, ids, loss) = weighted_loss(inst, &weights, &inst.inputs)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inst.inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[k], input);
        let mut numeric = Tensor::zeros(input.shape());
        for e in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut inputs = inst.inputs.clone();
                inputs[k].data_mut()[e] += delta;
                let (g, _, loss) = weighted_loss(inst, &weights, &inputs)?;
                Ok(g.scalar_value(loss))
            };
            numeric.data_mut()[e] = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
        let scale = analytic.norm().max(numeric.norm()).max(1e-12);
        worst = worst.max(analytic.sub(&numeric)?.norm() / scale);
    }
    Ok(worst)
}

/// The MLP used for inversion round trips: two multi-bias layers with batch
/// norm, leaky ReLU and tanh, biases aligned and non-trivial running statistics.
pub fn aligned_mlp(rng: &mut ChaCha8Rng) -> Result<Generator<f64>> {
    let spec = MlpSpec {
        d_z: 3,
        hidden: vec![6],
        d_x: 10,
        num_biases: 4,
        slope: 0.2,
        bias_sd: 0.3,
    };
    let mut gen = Generator::mlp(&spec, rng)?;
    for layer in gen.layers_mut() {
        if let GenLayer::BatchNorm(bn) = layer {
            bn.gamma = Tensor::from_fn(&[bn.dim()], |_| rng.random_range(0.5..1.5));
            bn.beta = Tensor::from_fn(&[bn.dim()], |_| rng.random_range(-0.3..0.3));
            bn.running_mean = Tensor::from_fn(&[bn.dim()], |_| rng.random_range(-0.3..0.3));
            bn.running_var = Tensor::from_fn(&[bn.dim()], |_| rng.random_range(0.5..2.0));
        }
    }
    gen.align_biases()?;
    Ok(gen)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyRecord {
    pub property: &'static str,
    pub case: String,
    pub trial: u64,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub trials: u64,
    pub seed: u64,
    pub checks: usize,
    pub failures: usize,
    pub pass: bool,
    pub worst_margin: Option<f64>,
    pub worst_gradient_error: Option<f64>,
    pub worst_inversion_error: Option<f64>,
}

/// Runs `trials` instances of each property. Trial `t` of every property
/// draws from its own counter, so results do not depend on ordering.
pub fn run_suite(trials: u64, seed: u64) -> Result<(Vec<PropertyRecord>, VerifySummary)> {
    let mut records = Vec::new();
    let cases = gradient_cases();
    for t in 0..trials {
        let mut rng = stream_rng(seed, Stream::Verify, 3 * t);
        let u = Tensor::<f64>::randn(&[6, 3], 1.0, &mut rng);
        let biases: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::randn(&[6], 1.0, &mut rng)).collect();
        let r = prop1_check(&u, &biases)?;
        records.push(PropertyRecord {
            property: "prop1_margin",
            case: "U 6x3, A=4".into(),
            trial: t,
            pass: r.margin >= MARGIN_TOLERANCE,
            value: r.margin,
            threshold: MARGIN_TOLERANCE,
        });

        let mut rng = stream_rng(seed, Stream::Verify, 3 * t + 1);
        for (name, make) in &cases {
            let inst = make(&mut rng);
            let err = check_gradient(&inst, FD_STEP, &mut rng)?;
            records.push(PropertyRecord {
                property: "gradient",
                case: (*name).into(),
                trial: t,
                pass: err < GRADIENT_TOLERANCE,
                value: err,
                threshold: GRADIENT_TOLERANCE,
            });
        }

        let mut rng = stream_rng(seed, Stream::Verify, 3 * t + 2);
        let gen = aligned_mlp(&mut rng)?;
        let z = Tensor::randn(&[gen.d_z()], 1.0, &mut rng);
        let i = rng.random_range(0..gen.num_biases());
        let back = gen.invert(&gen.forward(&z, i)?)?;
        let err = back.max_abs_diff(&z);
        records.push(PropertyRecord {
            property: "inversion",
            case: format!("bias {i}"),
            trial: t,
            pass: err < INVERSION_TOLERANCE,
            value: err,
            threshold: INVERSION_TOLERANCE,
        });
    }
    let worst = |p: &str, pick: fn(f64, f64) -> f64| {
        records.iter().filter(|r| r.property == p).map(|r| r.value).reduce(pick)
    };
    let failures = records.iter().filter(|r| !r.pass).count();
    let summary = VerifySummary {
        trials,
        seed,
        checks: records.len(),
        failures,
        pass: failures == 0,
        worst_margin: worst("prop1_margin", f64::min),
        worst_gradient_error: worst("gradient", f64::max),
        worst_inversion_error: worst("inversion", f64::max),
    };
    Ok((records, summary))
}
