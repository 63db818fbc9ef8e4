//! Acceptance suite. Every criterion prints one PASS/FAIL line, then the
//! test fails if any criterion failed. Criteria run one after another in a
//! single test so the wall-clock budgets are measured without contention.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use encgan_core::datasets::LabeledDataset;
use encgan_core::graph::Graph;
use encgan_core::layers::{Activation, BnMode, MultiBiasLinear};
use encgan_core::metrics::{
    autodiff_jacobian, disentanglement_score, manifold_coverage, pushforward_density, CoverageReport, Density,
    GeneratorMap, LatentMap,
};
use encgan_core::model::{
    encode, prop1_check, sample, style_transfer, BiasSelector, EncodeConfig, GenLayer, Generator, LatentPrior,
    MetricRecord, Trainer,
};
use encgan_core::persistio::{decode_checkpoint, encode_checkpoint, ndjson_string, Checkpoint, RunConfig};
use encgan_core::rng::seeded;
use encgan_core::verify::{aligned_mlp, gradient_cases, GradInstance};
use encgan_core::{NodeId, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = Result<(bool, String), String>;

/// Graph, input leaves, scalar loss and raw output shape of one FD evaluation.
type Built = (Graph<f64>, Vec<NodeId>, NodeId, Vec<usize>);

/// One multi-bias layer as logged during a training run.
struct LayerState {
    run: &'static str,
    epoch: u64,
    layer: usize,
    weight: Tensor<f64>,
    biases: Vec<Tensor<f64>>,
    logged_margin: f64,
}

#[derive(Default)]
struct Context {
    states: Vec<LayerState>,
}

impl Context {
    fn observe<T: Scalar>(&mut self, run: &'static str, rec: &MetricRecord, gen: &Generator<T>) {
        for (layer, m) in gen.multi_bias_layers().enumerate() {
            self.states.push(LayerState {
                run,
                epoch: rec.epoch,
                layer,
                weight: m.weight().cast(),
                biases: m.bias_list().iter().map(|b| b.cast()).collect(),
                logged_margin: rec.prop1_margin.get(layer).copied().unwrap_or(f64::NAN),
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Independent dense linear algebra used by the oracles.

fn mat_t_vec(u: &Tensor<f64>, a: &[f64]) -> Vec<f64> {
    (0..u.cols()).map(|j| (0..u.rows()).map(|r| u.at(r, j) * a[r]).sum()).collect()
}

fn gram(u: &Tensor<f64>) -> Vec<Vec<f64>> {
    let k = u.cols();
    let mut g = vec![vec![0.0; k]; k];
    for r in 0..u.rows() {
        let row = u.row(r);
        for i in 0..k {
            for j in 0..k {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    g
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Trace of `(1/(A−1)) Σ (v−v̄)(v−v̄)ᵀ`, accumulated as outer products.
fn outer_covariance_trace(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len();
    let d = vectors[0].len();
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for v in vectors {
        let c: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j] / (n - 1) as f64;
            }
        }
    }
    (0..d).map(|i| cov[i][i]).sum()
}

/// Both sides of the inequality from the outer-product chain:
/// lhs = trace(cov(Uᵀa)), rhs = trace(cov(P a)) / trace((UᵀU)⁻¹) with
/// P = U(UᵀU)⁻¹Uᵀ.
fn prop1_oracle(u: &Tensor<f64>, biases: &[Tensor<f64>]) -> (f64, f64) {
    let codes: Vec<Vec<f64>> = biases.iter().map(|a| mat_t_vec(u, a.data())).collect();
    let lhs = outer_covariance_trace(&codes);
    let ginv = invert(&gram(u));
    let k = u.cols();
    let tangential: Vec<Vec<f64>> = codes
        .iter()
        .map(|c| {
            let w: Vec<f64> = (0..k).map(|i| (0..k).map(|j| ginv[i][j] * c[j]).sum()).collect();
            (0..u.rows()).map(|r| (0..k).map(|j| u.at(r, j) * w[j]).sum()).collect()
        })
        .collect();
    let inv_trace: f64 = (0..k).map(|i| ginv[i][i]).sum();
    (lhs, outer_covariance_trace(&tangential) / inv_trace)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------------------
// Shared fixtures.

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Layer-structure check for the inversion and encoding fixtures.
fn describe_layers(gen: &Generator<f64>) -> (usize, usize, bool, bool) {
    let mut multi = 0;
    let mut bn = 0;
    let (mut lrelu, mut tanh) = (false, false);
    for layer in gen.layers() {
        match layer {
            GenLayer::MultiBias(_) => multi += 1,
            GenLayer::BatchNorm(_) => bn += 1,
            GenLayer::Activation(Activation::LeakyRelu { .. }) => lrelu = true,
            GenLayer::Activation(Activation::Tanh) => tanh = true,
        }
    }
    (multi, bn, lrelu, tanh)
}

/// Largest spread of the tangential codes Uᵀa⁽ⁱ⁾ across biases, computed here.
fn tangential_spread(gen: &Generator<f64>) -> f64 {
    gen.multi_bias_layers()
        .map(|m| {
            let codes: Vec<Vec<f64>> = m.bias_list().iter().map(|a| mat_t_vec(m.weight(), a.data())).collect();
            codes.iter().map(|c| max_abs_diff(c, &codes[0])).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn aligned_fixture(seed: u64) -> Result<Generator<f64>, String> {
    let gen = aligned_mlp(&mut seeded(seed)).map_err(|e| e.to_string())?;
    let (multi, bn, lrelu, tanh) = describe_layers(&gen);
    if multi != 2 || bn == 0 || !lrelu || !tanh {
        return Err(format!("fixture has {multi} multi-bias layers, {bn} batch norms, lrelu {lrelu}, tanh {tanh}"));
    }
    Ok(gen)
}

fn self_generated(gen: &Generator<f64>, rng: &mut ChaCha8Rng) -> (Tensor<f64>, usize, Tensor<f64>) {
    let z = Tensor::randn(&[gen.d_z()], 1.0, rng);
    let i = rng.random_range(0..gen.num_biases());
    let x = gen.forward(&z, i).expect("forward");
    (z, i, x)
}

fn run_config(value: serde_json::Value) -> Result<RunConfig, String> {
    RunConfig::from_json(&value.to_string()).map_err(|e| e.to_string())
}

struct TrainedRun {
    trainer: Trainer<f64>,
    log: Vec<MetricRecord>,
    data: LabeledDataset<f64>,
}

fn train_run(ctx: &mut Context, name: &'static str, config: &RunConfig, base: &Path) -> Result<TrainedRun, String> {
    let data = config.dataset.load(config.train.seed, base).map_err(|e| e.to_string())?;
    let (gen, disc) = config.build_models::<f64>(data.dim()).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(gen, disc, config.train.clone()).map_err(|e| e.to_string())?;
    let log = trainer
        .train(&data.samples, |rec, gen| ctx.observe(name, rec, gen))
        .map_err(|e| format!("{name}: {e}"))?;
    Ok(TrainedRun { trainer, log, data })
}

fn coverage(run: &TrainedRun, n: usize, seed: u64) -> Result<CoverageReport, String> {
    let gen = &run.trainer.generator;
    let prior = LatentPrior::new(gen.d_z()).map_err(|e| e.to_string())?;
    let selector = BiasSelector::new(gen.num_biases()).map_err(|e| e.to_string())?;
    let s = sample(gen, &prior, &selector, n, BnMode::Eval, &mut seeded(seed)).map_err(|e| e.to_string())?;
    manifold_coverage(&s.x, &s.indices, gen.num_biases(), &run.data, 0.1).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Criteria.

const PROP1_MARGIN: f64 = -1e-12;
const PROP1_ORACLE: f64 = 1e-10;

fn criterion_1(ctx: &mut Context) -> Check {
    let mut rng = seeded(101);
    let trials = 1000;
    let mut worst_margin = f64::INFINITY;
    let mut worst_oracle: f64 = 0.0;
    for k in 0..trials {
        let u = Tensor::<f64>::randn(&[6, 3], 1.0, &mut rng);
        let mut biases: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::randn(&[6], 1.0, &mut rng)).collect();
        if k % 2 == 1 {
            // Near the boundary: strip the tangential part, keep a tiny residue.
            let ginv = invert(&gram(&u));
            let residue = 10f64.powi(-rng.random_range(2..8));
            for a in &mut biases {
                let c = mat_t_vec(&u, a.data());
                let w: Vec<f64> = (0..3).map(|i| (0..3).map(|j| ginv[i][j] * c[j]).sum()).collect();
                for r in 0..6 {
                    let t: f64 = (0..3).map(|j| u.at(r, j) * w[j]).sum();
                    a.data_mut()[r] -= (1.0 - residue) * t;
                }
            }
        }
        let r = prop1_check(&u, &biases).map_err(|e| e.to_string())?;
        let (lhs, rhs) = prop1_oracle(&u, &biases);
        worst_margin = worst_margin.min(r.margin);
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        worst_oracle = worst_oracle.max((lhs - r.lhs).abs() / scale).max((rhs - r.rhs).abs() / scale);
    }
    let mut worst_state_margin = f64::INFINITY;
    let mut worst_state_oracle: f64 = 0.0;
    let mut bad = Vec::new();
    for s in &ctx.states {
        let r = prop1_check(&s.weight, &s.biases).map_err(|e| e.to_string())?;
        let (lhs, rhs) = prop1_oracle(&s.weight, &s.biases);
        let margin = r.margin.min(s.logged_margin);
        worst_state_margin = worst_state_margin.min(margin);
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        let err = ((lhs - r.lhs).abs() / scale).max((rhs - r.rhs).abs() / scale);
        worst_state_oracle = worst_state_oracle.max(err);
        if margin < PROP1_MARGIN || err > PROP1_ORACLE || !close(r.margin, s.logged_margin, PROP1_ORACLE) {
            bad.push(format!("{} epoch {} layer {}", s.run, s.epoch, s.layer));
        }
    }
    let runs: std::collections::BTreeSet<&str> = ctx.states.iter().map(|s| s.run).collect();
    let pass = worst_margin >= PROP1_MARGIN && worst_oracle <= PROP1_ORACLE && bad.is_empty() && !ctx.states.is_empty();
    Ok((
        pass,
        format!(
            "{trials} random instances (half near alignment): min margin {worst_margin:.3e}, oracle err {worst_oracle:.1e}; \
             {} logged layer states from {} runs: min margin {worst_state_margin:.3e}, oracle err {worst_state_oracle:.1e}, violations {}",
            ctx.states.len(),
            runs.len(),
            bad.len()
        ),
    ))
}

/// Central-difference check of one instance against reverse mode, with a
/// random weighting of the outputs.
fn fd_relative_error(inst: &GradInstance, h: f64, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let build = |inputs: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> Result<Built, String> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = (inst.build)(&mut g, &ids).map_err(|e| e.to_string())?;
        let shape = g.value(out).shape().to_vec();
        let loss = match weights {
            Some(w) => {
                let w = g.constant(w.clone().reshape(&shape).map_err(|e| e.to_string())?);
                let p = g.mul(out, w).map_err(|e| e.to_string())?;
                g.sum(p)
            }
            None => out,
        };
        Ok((g, ids, loss, shape))
    };
    let (_, _, _, shape) = build(&inst.inputs, None)?;
    let numel: usize = shape.iter().product();
    let weights = Tensor::from_fn(&[numel], |_| rng.random_range(-1.0..1.0));
    let (g, ids, loss, _) = build(&inst.inputs, Some(&weights))?;
    let grads = g.backward(loss).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (k, input) in inst.inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[k], input).to_f64_vec();
        let mut numeric = vec![0.0; input.numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| -> Result<f64, String> {
                let mut inputs = inst.inputs.clone();
                inputs[k].data_mut()[e] += delta;
                let (g, _, loss, _) = build(&inputs, Some(&weights))?;
                Ok(g.scalar_value(loss))
            };
            *slot = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-12));
    }
    Ok(worst)
}

fn criterion_2(_: &mut Context) -> Check {
    const GRAPH_OPS: [&str; 22] = [
        "matmul", "transpose", "add", "sub", "mul", "add_row", "mul_row", "scale", "add_scalar", "scale_by", "sum",
        "mean", "mean_rows", "square", "sqrt", "recip", "log", "sinh", "tanh", "leaky_relu", "gather_rows",
        "batch_norm_train",
    ];
    let cases = gradient_cases();
    let names: Vec<&str> = cases.iter().map(|(n, _)| *n).collect();
    let missing: Vec<&str> = GRAPH_OPS.iter().copied().filter(|op| !names.contains(op)).collect();
    let mut rng = seeded(202);
    let instances = 100;
    let mut worst = (0.0f64, "");
    for (name, make) in &cases {
        for _ in 0..instances {
            let inst = make(&mut rng);
            let err = fd_relative_error(&inst, 1e-5, &mut rng)?;
            if err > worst.0 || err.is_nan() {
                worst = (err, name);
            }
        }
    }
    let pass = missing.is_empty() && worst.0 < 1e-4;
    Ok((
        pass,
        format!(
            "{} ops x {instances} instances, h=1e-5, f64: worst rel err {:.2e} ({}); uncovered ops {:?}",
            cases.len(),
            worst.0,
            worst.1,
            missing
        ),
    ))
}

fn criterion_3(_: &mut Context) -> Check {
    let gen = aligned_fixture(303)?;
    let spread = tangential_spread(&gen);
    let mut rng = seeded(304);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (z, _, x) = self_generated(&gen, &mut rng);
        let back = gen.invert(&x).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(back.data(), z.data()));
    }
    Ok((
        worst < 1e-6 && spread < 1e-12,
        format!("1000 (z, i) pairs: max |invert(forward) - z|_inf {worst:.2e}; tangential spread {spread:.1e}"),
    ))
}

fn criterion_4(_: &mut Context) -> Check {
    let gen = aligned_fixture(404)?;
    let mut rng = seeded(405);
    let config = EncodeConfig { mu: 0.1, ..Default::default() };
    let samples = 20;
    let (mut worst_z, mut worst_closed, mut worst_recon) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..samples {
        let (z, _, x) = self_generated(&gen, &mut rng);
        let r = encode(&gen, &x, &EncodeConfig { seed: k, ..config.clone() }).map_err(|e| e.to_string())?;
        let closed = gen.invert(&x).map_err(|e| e.to_string())?;
        worst_z = worst_z.max(max_abs_diff(r.z.data(), z.data()));
        worst_closed = worst_closed.max(max_abs_diff(r.z.data(), closed.data()));
        worst_recon = worst_recon.max(r.reconstruction_error);
    }
    Ok((
        worst_z < 1e-3 && worst_closed < 1e-3,
        format!(
            "{samples} self-generated samples, mu=0.1: max |z_hat - z|_inf {worst_z:.2e}, \
             max |z_hat - closed form|_inf {worst_closed:.2e}, max reconstruction error {worst_recon:.1e}"
        ),
    ))
}

/// Segment run settings: the regularizer is switched on after a warm-up at
/// a negligible weight so the generator first finds the segment geometry.
fn segments_config(lambda: f64) -> serde_json::Value {
    let schedule = if lambda > 0.0 { json!([{"from_epoch": 4000, "lambda": lambda}]) } else { json!([]) };
    json!({
        "dataset": {"kind": "segments", "segments": 2, "n_per": 512, "d_x": 2, "separation": 0.8, "noise_sd": 0.01},
        "model": {"d_z": 1, "hidden": [], "num_biases": 2, "bias_sd": 0.5, "critic_hidden": [64, 64]},
        "train": {
            "lambda": if lambda > 0.0 { 5e-6 } else { 0.0 }, "lambda_schedule": schedule,
            "lr": 0.0002, "beta2": 0.9, "n_critic": 5, "epochs": 6000, "batch_size": 64, "seed": 1
        }
    })
}

fn criterion_5(ctx: &mut Context) -> Check {
    let base = Path::new(".");
    let reg = train_run(ctx, "segments lambda>0", &run_config(segments_config(0.05))?, base)?;
    let twin = train_run(ctx, "segments lambda=0", &run_config(segments_config(0.0))?, base)?;
    let initial = &reg.log[0].alignment_residual;
    let last = &reg.log.last().unwrap().alignment_residual;
    let twin_last = &twin.log.last().unwrap().alignment_residual;
    let shrunk = last.iter().zip(initial).all(|(l, i)| *l < 0.1 * i);
    let below_twin = last.iter().zip(twin_last).all(|(l, t)| l < t);
    let cov = coverage(&reg, 4000, 505)?;
    let pure = cov.distinct && cov.purity.iter().all(|&p| p >= 0.9);
    Ok((
        shrunk && below_twin && pure,
        format!(
            "residual {:.2e} -> {:.2e} (twin {:.2e}); purity {:?}, distinct segments {}",
            initial[0], last[0], twin_last[0], cov.purity, cov.distinct
        ),
    ))
}

/// Digits 0 and 1 at 14×14. The wide initial bias spread lets each bias
/// settle on one digit during the warm-up before the regularizer engages.
fn mnist_config() -> serde_json::Value {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mnist01");
    json!({
        "dataset": {
            "kind": "idx",
            "images": fixture.join("images-idx3-ubyte"),
            "labels": fixture.join("labels-idx1-ubyte"),
            "downsample": true,
            "classes": [0, 1]
        },
        "model": {"d_z": 8, "hidden": [32, 96], "num_biases": 2, "bias_sd": 1.0, "critic_hidden": [128]},
        "train": {
            "lambda": 5e-6, "lambda_schedule": [{"from_epoch": 150, "lambda": 0.05}],
            "lr": 0.0002, "beta2": 0.9, "n_critic": 5, "epochs": 400, "batch_size": 64, "seed": 6
        }
    })
}

fn criterion_6(ctx: &mut Context) -> Check {
    let run = train_run(ctx, "mnist", &run_config(mnist_config())?, Path::new("."))?;
    let finite = run.log.iter().all(|r| {
        r.loss_g.is_none_or(f64::is_finite)
            && r.loss_d.is_none_or(f64::is_finite)
            && r.r_bias.iter().chain(&r.alignment_residual).all(|v| v.is_finite())
    });
    let first = run.log.iter().find(|r| r.epoch == 1).ok_or("no epoch-1 record")?;
    let last = run.log.last().unwrap();
    // Signed reading of a 50% decrease of each layer's log-trace term.
    let halved = last.r_bias.iter().zip(&first.r_bias).all(|(l, f)| *l <= f - 0.5 * f.abs());
    let ratios: Vec<String> = last
        .alignment_residual
        .iter()
        .zip(&first.alignment_residual)
        .map(|(l, f)| format!("{:.1e}", l / f))
        .collect();
    let cov = coverage(&run, 2000, 606)?;
    let pure = cov.distinct && cov.purity.iter().all(|&p| p >= 0.8);
    Ok((
        finite && halved && pure,
        format!(
            "{} images 14x14, {} epochs: finite {finite}; R_bias per layer {:?} -> {:?} (trace ratios {ratios:?}); \
             purity {:?}, distinct classes {}",
            run.data.len(),
            last.epoch,
            first.r_bias.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>(),
            last.r_bias.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>(),
            cov.purity.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>(),
            cov.distinct
        ),
    ))
}

fn criterion_7(_: &mut Context) -> Check {
    let mut rng = seeded(707);
    let make = |sd: [f64; 2], rng: &mut ChaCha8Rng| -> Vec<Tensor<f64>> {
        (0..500)
            .map(|_| {
                let offset = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let z = Tensor::<f64>::randn(&[10, 2], 1.0, rng);
                Tensor::from_fn(&[10, 2], |k| offset[k % 2] + sd[k % 2] * z.data()[k])
            })
            .collect()
    };
    let anisotropic = make([10.0, 1.0], &mut rng);
    let isotropic = make([1.0, 1.0], &mut rng);
    let a = disentanglement_score(&anisotropic).map_err(|e| e.to_string())?;
    let b = disentanglement_score(&isotropic).map_err(|e| e.to_string())?;
    // Closed-form 2×2 eigenvalues of the pooled within-group covariance.
    let oracle = |groups: &[Tensor<f64>]| {
        let mut s = [0.0f64; 3];
        let mut n = 0usize;
        for g in groups {
            let m = g.mean_rows();
            for r in 0..g.rows() {
                let (x, y) = (g.at(r, 0) - m.data()[0], g.at(r, 1) - m.data()[1]);
                s[0] += x * x;
                s[1] += x * y;
                s[2] += y * y;
                n += 1;
            }
        }
        let d = (n - groups.len()) as f64;
        let (sxx, sxy, syy) = (s[0] / d, s[1] / d, s[2] / d);
        let mid = 0.5 * (sxx + syy);
        let rad = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
        (mid + rad) / (mid - rad + 1e-12)
    };
    let (oa, ob) = (oracle(&anisotropic), oracle(&isotropic));
    let pass = (a.score - 100.0).abs() <= 20.0 && (1.0..=1.3).contains(&b.score) && close(a.score, oa, 1e-9) && close(b.score, ob, 1e-9);
    Ok((
        pass,
        format!(
            "5000 codes in 500 groups: 100:1 score {:.2} (oracle {oa:.2}), isotropic score {:.4} (oracle {ob:.4})",
            a.score, b.score
        ),
    ))
}

fn criterion_8(_: &mut Context) -> Check {
    let gen = aligned_fixture(808)?;
    let mut rng = seeded(809);
    let config = EncodeConfig::default();
    let pairs = 10;
    let (mut worst_transfer, mut worst_identity_excess, mut worst_recon) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for k in 0..pairs {
        let cfg = EncodeConfig { seed: k, ..config.clone() };
        let (_, i_source, x_source) = self_generated(&gen, &mut rng);
        let (z_target, _, x_target) = self_generated(&gen, &mut rng);
        let t = style_transfer(&gen, &x_source, &x_target, &cfg).map_err(|e| e.to_string())?;
        let expected = gen.forward(&z_target, i_source).map_err(|e| e.to_string())?;
        worst_transfer = worst_transfer.max(max_abs_diff(t.output.data(), expected.data()));

        let id = style_transfer(&gen, &x_source, &x_source, &cfg).map_err(|e| e.to_string())?;
        let dist = id.output.sub(&x_source).map_err(|e| e.to_string())?.norm_sq();
        let err = id.source.reconstruction_error;
        worst_recon = worst_recon.max(err);
        worst_identity_excess = worst_identity_excess.max(dist - err * (1.0 + 1e-9) - 1e-15);
    }
    Ok((
        worst_transfer < 2e-3 && worst_identity_excess <= 0.0 && worst_recon < 1e-3,
        format!(
            "{pairs} pairs: max |transfer - f(z_target; source bias)|_inf {worst_transfer:.2e} (limit 2e-3); \
             identity transfer within reconstruction error {} (max error {worst_recon:.1e})",
            worst_identity_excess <= 0.0
        ),
    ))
}

fn determinism_config(precision: &str) -> serde_json::Value {
    json!({
        "dataset": {"kind": "arcs", "arcs": 2, "n_per": 128, "radius_spread": 0.4, "noise_sd": 0.01},
        "model": {"d_z": 1, "hidden": [], "num_biases": 2, "critic_hidden": [32], "precision": precision},
        "train": {"lambda": 0.05, "lr": 0.001, "n_critic": 2, "epochs": 30, "batch_size": 32, "seed": 9}
    })
}

fn determinism<T: Scalar>(ctx: &mut Context, precision: &str, name: &'static str) -> Result<(bool, bool, bool), String> {
    let config = run_config(determinism_config(precision))?;
    let data = config.dataset.load(config.train.seed, Path::new(".")).map_err(|e| e.to_string())?;
    let samples: Tensor<T> = data.samples.cast();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let (gen, disc) = config.build_models::<T>(data.dim()).map_err(|e| e.to_string())?;
        let mut trainer = Trainer::new(gen, disc, config.train.clone()).map_err(|e| e.to_string())?;
        let log = trainer
            .train(&samples, |rec, gen| ctx.observe(name, rec, gen))
            .map_err(|e| e.to_string())?;
        let ckpt = encode_checkpoint(&Checkpoint::from_trainer(&trainer)).map_err(|e| e.to_string())?;
        runs.push((trainer, ndjson_string(&log), ckpt));
    }
    let same_metrics = runs[0].1 == runs[1].1;
    let same_ckpt = runs[0].2 == runs[1].2;
    let (mut original, _, bytes) = runs.remove(0);
    let mut restored = decode_checkpoint::<T>(&bytes)
        .map_err(|e| e.to_string())?
        .into_trainer()
        .map_err(|e| e.to_string())?;
    original.iteration(&samples).map_err(|e| e.to_string())?;
    restored.iteration(&samples).map_err(|e| e.to_string())?;
    let a = encode_checkpoint(&Checkpoint::from_trainer(&original)).map_err(|e| e.to_string())?;
    let b = encode_checkpoint(&Checkpoint::from_trainer(&restored)).map_err(|e| e.to_string())?;
    Ok((same_metrics, same_ckpt, a == b && original == restored))
}

fn criterion_9(ctx: &mut Context) -> Check {
    let f64_result = determinism::<f64>(ctx, "f64", "determinism f64")?;
    let f32_result = determinism::<f32>(ctx, "f32", "determinism f32")?;
    let ok = |r: (bool, bool, bool)| r.0 && r.1 && r.2;
    Ok((
        ok(f64_result) && ok(f32_result),
        format!(
            "f64: metrics identical {}, checkpoints identical {}, resumed step bit-exact {}; \
             f32: metrics identical {}, checkpoints identical {}, resumed step bit-exact {}",
            f64_result.0, f64_result.1, f64_result.2, f32_result.0, f32_result.1, f32_result.2
        ),
    ))
}

/// One multi-bias layer and tanh mapping a line into the plane.
fn curve_generator() -> Result<Generator<f64>, String> {
    let layer = MultiBiasLinear::new(
        Tensor::matrix(2, 1, vec![0.7, -0.4]).unwrap(),
        Tensor::matrix(2, 2, vec![0.1, 0.3, -0.2, -0.5]).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    Generator::new(vec![GenLayer::MultiBias(layer), GenLayer::Activation(Activation::Tanh)]).map_err(|e| e.to_string())
}

fn criterion_10(_: &mut Context) -> Check {
    let gen = curve_generator()?;
    let mut worst_integral: f64 = 0.0;
    for index in 0..gen.num_biases() {
        let map = GeneratorMap { generator: &gen, index };
        // Midpoint rule in z, arc length from the polyline through forward evaluations.
        let (lo, hi, n) = (-9.0, 9.0, 40_000);
        let step = (hi - lo) / n as f64;
        let mut integral = 0.0;
        let mut prev = map.forward(&Tensor::vector(vec![lo])).map_err(|e| e.to_string())?;
        for k in 0..n {
            let z_next = lo + (k + 1) as f64 * step;
            let next = map.forward(&Tensor::vector(vec![z_next])).map_err(|e| e.to_string())?;
            let arc = next.sub(&prev).map_err(|e| e.to_string())?.norm();
            let mid = Tensor::vector(vec![z_next - 0.5 * step]);
            let density = match pushforward_density(&map, &mid).map_err(|e| e.to_string())? {
                Density::Value { density, .. } => density,
                Density::Undefined => return Err(format!("density undefined at z = {}", mid.data()[0])),
            };
            integral += density * arc;
            prev = next;
        }
        worst_integral = worst_integral.max((integral - 1.0).abs());
    }

    let mlp = aligned_fixture(1010)?;
    let mut rng = seeded(1011);
    let h = 1e-6;
    let mut worst_jacobian: f64 = 0.0;
    for _ in 0..20 {
        let z = Tensor::randn(&[mlp.d_z()], 1.0, &mut rng);
        let index = rng.random_range(0..mlp.num_biases());
        let map = GeneratorMap { generator: &mlp, index };
        let ad = autodiff_jacobian(&map, &z).map_err(|e| e.to_string())?;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for j in 0..mlp.d_z() {
            let shifted = |delta: f64| {
                let mut zz = z.clone();
                zz.data_mut()[j] += delta;
                mlp.forward(&zz, index).map(|x| x.to_f64_vec())
            };
            let (plus, minus) = (shifted(h).map_err(|e| e.to_string())?, shifted(-h).map_err(|e| e.to_string())?);
            for r in 0..mlp.d_x() {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                diff += (ad.at(r, j) - fd).powi(2);
                norm += fd * fd;
            }
        }
        worst_jacobian = worst_jacobian.max(diff.sqrt() / norm.sqrt().max(1e-12));
    }
    Ok((
        worst_integral <= 1e-3 && worst_jacobian < 1e-4,
        format!(
            "1-D toy: max |integral - 1| {worst_integral:.2e} over {} biases; MLP Jacobian autodiff vs central differences: max rel err {worst_jacobian:.2e}",
            gen.num_biases()
        ),
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn(&mut Context) -> Check,
}

fn criteria() -> Vec<Criterion> {
    let c = |id, name, secs, run| Criterion { id, name, budget: Duration::from_secs(secs), run };
    vec![
        c(1, "inequality property suite", 10, criterion_1 as fn(&mut Context) -> Check),
        c(2, "gradient fidelity", 60, criterion_2),
        c(3, "inversion round trip", 5, criterion_3),
        c(4, "encoding oracle equivalence", 120, criterion_4),
        c(5, "regularizer efficacy on parallel segments", 300, criterion_5),
        c(6, "desk-scale MNIST run", 1800, criterion_6),
        c(7, "disentanglement pipeline sanity", 30, criterion_7),
        c(8, "style-transfer consistency", 120, criterion_8),
        c(9, "determinism and persistence", 300, criterion_9),
        c(10, "pushforward density diagnostic", 10, criterion_10),
    ]
}

#[test]
fn acceptance() {
    // Training criteria run before the inequality suite, which also checks
    // every layer state they logged.
    let order = [2, 3, 4, 7, 8, 10, 9, 5, 6, 1];
    let all = criteria();
    let mut ctx = Context::default();
    let mut results = Vec::new();
    for id in order {
        let c = all.iter().find(|c| c.id == id).unwrap();
        let start = Instant::now();
        let outcome = (c.run)(&mut ctx);
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass && elapsed <= c.budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let line = format!(
            "criterion {:>2} {} {}: {detail}; runtime {:.1}s (budget {}s)",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        // Unbuffered stderr bypasses the harness capture so the line always shows.
        let _ = writeln!(std::io::stderr(), "{line}");
        results.push((c.id, pass, line));
    }
    results.sort_by_key(|r| r.0);
    let mut summary = String::from("acceptance summary:\n");
    for (_, _, line) in &results {
        summary.push_str(line);
        summary.push('\n');
    }
    let _ = std::io::stderr().write_all(summary.as_bytes());
    let failed: Vec<u32> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
