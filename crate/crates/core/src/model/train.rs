//! Alternating critic/generator updates with Adam.
//!
//! All randomness is derived from `(seed, stream, step counter)`, so a
//! trainer restored from a checkpoint continues exactly where the original
//! left off.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::BnMode;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::discriminator::Discriminator;
use super::generator::Generator;
use super::regularizer::{bias_regularizer_graph, per_layer_regularizer, prop1_layers, EPS_REG};
use super::sampling::{BiasSelector, LatentPrior};

/// λ takes `lambda` from generator epoch `from_epoch` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaStep {
    pub from_epoch: u64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    #[serde(default)]
    pub lambda_schedule: Vec<LambdaStep>,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    pub n_critic: usize,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
}

fn default_beta1() -> f64 {
    0.5
}

fn default_beta2() -> f64 {
    0.999
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            lambda_schedule: Vec::new(),
            lr: 2e-4,
            beta1: default_beta1(),
            beta2: default_beta2(),
            n_critic: 5,
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lambda_at(&self, epoch: u64) -> f64 {
        self.lambda_schedule
            .iter()
            .filter(|s| s.from_epoch <= epoch)
            .max_by_key(|s| s.from_epoch)
            .map_or(self.lambda, |s| s.lambda)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Generator updates performed so far.
    pub step: u64,
    pub epoch: u64,
    #[serde(rename = "L_G")]
    pub loss_g: Option<f64>,
    #[serde(rename = "L_D")]
    pub loss_d: Option<f64>,
    /// Per-layer log(trace(cov(U_lᵀa_l)) + ε); empty for single-bias models.
    #[serde(rename = "R_bias")]
    pub r_bias: Vec<f64>,
    pub prop1_margin: Vec<f64>,
    pub alignment_residual: Vec<f64>,
    pub lambda: f64,
}

impl MetricRecord {
    pub fn r_bias_total(&self) -> f64 {
        self.r_bias.iter().sum()
    }
}

/// Losses from one generator iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub loss_g: f64,
    pub loss_d: f64,
}

/// Full training state: models, optimizer moments and step counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub gen_opt: Adam<T>,
    pub disc_opt: Adam<T>,
    pub config: TrainConfig,
    pub gen_steps: u64,
    pub critic_steps: u64,
}

fn snapshot<T: Scalar>(z: &Tensor<T>, indices: &[usize], real: Option<&Tensor<T>>) -> String {
    serde_json::json!({
        "z": z.to_f64_vec(),
        "z_shape": z.shape(),
        "indices": indices,
        "real": real.map(|r| r.to_f64_vec()),
    })
    .to_string()
}

impl<T: Scalar> Trainer<T> {
    pub fn new(generator: Generator<T>, discriminator: Discriminator<T>, config: TrainConfig) -> Result<Self> {
        if generator.d_x() != discriminator.d_x() {
            return Err(Error::contract(format!(
                "generator emits {} values, critic expects {}",
                generator.d_x(),
                discriminator.d_x()
            )));
        }
        validate_train_config(&config, generator.num_biases())?;
        let gen_opt = Adam::new(config.adam(), &generator.param_shapes());
        let disc_opt = Adam::new(config.adam(), &discriminator.param_shapes());
        Ok(Self {
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            config,
            gen_steps: 0,
            critic_steps: 0,
        })
    }

    fn batches_per_epoch(&self, n: usize) -> u64 {
        (n / self.config.batch_size).max(1) as u64
    }

    /// Generator iterations that make up one logged epoch.
    pub fn iterations_per_epoch(&self, n: usize) -> u64 {
        (self.batches_per_epoch(n) / self.config.n_critic as u64).max(1)
    }

    pub fn epoch(&self, n: usize) -> u64 {
        self.gen_steps / self.iterations_per_epoch(n)
    }

    fn real_batch(&self, data: &Tensor<T>) -> Result<Tensor<T>> {
        let n = data.rows();
        let bpe = self.batches_per_epoch(n);
        let data_epoch = self.critic_steps / bpe;
        let pos = (self.critic_steps % bpe) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.config.seed, Stream::Shuffle, data_epoch));
        let b = self.config.batch_size.min(n);
        let rows: Vec<Tensor<T>> = order[pos * b..pos * b + b]
            .iter()
            .map(|&r| Tensor::vector(data.row(r).to_vec()))
            .collect();
        Tensor::stack_rows(&rows)
    }

    fn noise(&self, stream: Stream, counter: u64) -> (Tensor<T>, Vec<usize>) {
        let mut rng = stream_rng(self.config.seed, stream, counter);
        let prior = LatentPrior { d_z: self.generator.d_z() };
        let selector = BiasSelector {
            num_biases: self.generator.num_biases(),
        };
        let b = self.config.batch_size;
        let z = prior.draw(b, &mut rng);
        let idx = selector.draw(b, &mut rng);
        (z, idx)
    }

    fn critic_step(&mut self, data: &Tensor<T>) -> Result<f64> {
        self.discriminator.power_iterate();
        let real = self.real_batch(data)?;
        let (z, idx) = self.noise(Stream::CriticNoise, self.critic_steps);
        let (fake, _) = self.generator.forward_batch(&z, &idx, BnMode::Train)?;

        let mut g = Graph::new();
        let binding = self.discriminator.bind(&mut g, true);
        let real_n = g.constant(real.clone());
        let fake_n = g.constant(fake);
        let d_real = self.discriminator.forward_graph(&mut g, &binding, real_n)?;
        let d_fake = self.discriminator.forward_graph(&mut g, &binding, fake_n)?;
        let m_real = g.mean(d_real);
        let m_fake = g.mean(d_fake);
        let loss = g.sub(m_fake, m_real)?;
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NumericAbort {
                step: self.gen_steps,
                quantity: "L_D".into(),
                snapshot: snapshot(&z, &idx, Some(&real)),
            });
        }
        let grads = g.backward(loss)?;
        let grad_list: Vec<Tensor<T>> = binding
            .params()
            .into_iter()
            .map(|id| grads.get(id).cloned().expect("critic parameter reached"))
            .collect();
        let lr = self.config.lr;
        let mut params = self.discriminator.params_mut();
        self.disc_opt.update(&mut params, &grad_list, lr);
        self.critic_steps += 1;
        Ok(value.f64())
    }

    fn generator_step(&mut self, lambda: f64) -> Result<f64> {
        let (z, idx) = self.noise(Stream::GeneratorNoise, self.gen_steps);
        let mut g = Graph::new();
        let gb = self.generator.bind(&mut g, true);
        let db = self.discriminator.bind(&mut g, false);
        let zn = g.constant(z.clone());
        let pass = self.generator.forward_graph(&mut g, &gb, zn, &idx, BnMode::Train)?;
        let critic = self.discriminator.forward_graph(&mut g, &db, pass.output)?;
        let mean = g.mean(critic);
        let mut loss = g.scale(mean, -T::one());
        if lambda != 0.0 {
            let reg = bias_regularizer_graph(&self.generator, &mut g, &gb, EPS_REG)?;
            let weighted = g.scale(reg, T::c(lambda));
            loss = g.add(loss, weighted)?;
        }
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NumericAbort {
                step: self.gen_steps,
                quantity: "L_G".into(),
                snapshot: snapshot(&z, &idx, None),
            });
        }
        let grads = g.backward(loss)?;
        let grad_list: Vec<Tensor<T>> = gb
            .params()
            .into_iter()
            .zip(self.generator.param_shapes())
            .map(|(id, shape)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(&shape)))
            .collect();
        if let Some(bad) = grad_list.iter().position(|t| !t.is_finite()) {
            return Err(Error::NumericAbort {
                step: self.gen_steps,
                quantity: format!("generator gradient #{bad}"),
                snapshot: snapshot(&z, &idx, None),
            });
        }
        let lr = self.config.lr;
        let mut params = self.generator.params_mut();
        self.gen_opt.update(&mut params, &grad_list, lr);
        self.generator.update_running_stats(&pass.batch_stats);
        self.gen_steps += 1;
        Ok(value.f64())
    }

    /// `n_critic` critic updates followed by one generator update.
    pub fn iteration(&mut self, data: &Tensor<T>) -> Result<StepRecord> {
        let lambda = self.config.lambda_at(self.epoch(data.rows()));
        let mut loss_d = 0.0;
        for _ in 0..self.config.n_critic {
            loss_d = self.critic_step(data)?;
        }
        let loss_g = self.generator_step(lambda)?;
        Ok(StepRecord { loss_g, loss_d })
    }

    /// Metric snapshot of the current generator.
    pub fn record(&self, epoch: u64, loss_g: Option<f64>, loss_d: Option<f64>) -> Result<MetricRecord> {
        let multi = self.generator.num_biases() >= 2;
        let (r_bias, prop1_margin) = if multi {
            let r = per_layer_regularizer(&self.generator, EPS_REG)?
                .into_iter()
                .map(|v| v.f64())
                .collect();
            let m = prop1_layers(&self.generator)?.into_iter().map(|p| p.margin).collect();
            (r, m)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(MetricRecord {
            step: self.gen_steps,
            epoch,
            loss_g,
            loss_d,
            r_bias,
            prop1_margin,
            alignment_residual: self
                .generator
                .multi_bias_layers()
                .map(|m| m.alignment_residual().f64())
                .collect(),
            lambda: self.config.lambda_at(epoch),
        })
    }

    /// Trains until `config.epochs` epochs are done, logging one record
    /// before the first update and one at the end of every epoch. The
    /// observer sees each record together with the generator it describes.
    pub fn train(
        &mut self,
        data: &Tensor<T>,
        mut observer: impl FnMut(&MetricRecord, &Generator<T>),
    ) -> Result<Vec<MetricRecord>> {
        validate_data(data, self.generator.d_x())?;
        let n = data.rows();
        let per_epoch = self.iterations_per_epoch(n);
        let mut log = Vec::new();
        if self.gen_steps == 0 {
            let rec = self.record(0, None, None)?;
            observer(&rec, &self.generator);
            log.push(rec);
        }
        while self.epoch(n) < self.config.epochs {
            let (mut sum_g, mut sum_d) = (0.0, 0.0);
            for _ in 0..per_epoch {
                let s = self.iteration(data)?;
                sum_g += s.loss_g;
                sum_d += s.loss_d;
            }
            let k = per_epoch as f64;
            let rec = self.record(self.epoch(n), Some(sum_g / k), Some(sum_d / k))?;
            observer(&rec, &self.generator);
            log.push(rec);
        }
        Ok(log)
    }
}

pub(crate) fn validate_train_config(config: &TrainConfig, num_biases: usize) -> Result<()> {
    let mut problems = Vec::new();
    if config.n_critic == 0 {
        problems.push("train.n_critic must be positive".to_string());
    }
    if config.batch_size == 0 {
        problems.push("train.batch_size must be positive".to_string());
    }
    if !(config.lr > 0.0) {
        problems.push("train.lr must be positive".to_string());
    }
    for (name, b) in [("beta1", config.beta1), ("beta2", config.beta2)] {
        if !(0.0..1.0).contains(&b) {
            problems.push(format!("train.{name} must lie in [0, 1)"));
        }
    }
    let any_lambda = config.lambda != 0.0 || config.lambda_schedule.iter().any(|s| s.lambda != 0.0);
    if num_biases < 2 && any_lambda {
        problems.push("train.lambda must be 0 when the model has a single bias".to_string());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

fn validate_data<T: Scalar>(data: &Tensor<T>, d_x: usize) -> Result<()> {
    if data.shape().len() != 2 || data.cols() != d_x {
        return Err(Error::contract(format!(
            "training data has shape {:?}, expected [n, {d_x}]",
            data.shape()
        )));
    }
    if data.data().iter().any(|v| v.abs() > T::one()) {
        return Err(Error::contract("training data must lie in [-1, 1]"));
    }
    Ok(())
}
