//! Binary checkpoint: `"ENCG"`, u32 version, u64 manifest length, JSON
//! manifest, then little-endian scalar arrays in manifest order.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, BatchNorm, MultiBiasLinear, SpectralNormLinear};
use crate::model::{DiscLayer, Discriminator, GenLayer, Generator, LambdaStep, TrainConfig, Trainer};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ENCG";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Discriminator, optimizer moments and counters needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState<T> {
    pub discriminator: Discriminator<T>,
    pub gen_opt: Adam<T>,
    pub disc_opt: Adam<T>,
    pub config: TrainConfig,
    pub gen_steps: u64,
    pub critic_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub generator: Generator<T>,
    pub training: Option<TrainingState<T>>,
    pub seed: u64,
    /// Free-form run label such as "wgan-equivalent".
    pub label: Option<String>,
    /// Caller metadata stored verbatim in the manifest (sample shape, model spec).
    pub metadata: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    /// Generator only; enough for sampling and encoding.
    pub fn from_generator(generator: Generator<T>, seed: u64) -> Self {
        Self {
            generator,
            training: None,
            seed,
            label: None,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn from_trainer(trainer: &Trainer<T>) -> Self {
        Self {
            generator: trainer.generator.clone(),
            training: Some(TrainingState {
                discriminator: trainer.discriminator.clone(),
                gen_opt: trainer.gen_opt.clone(),
                disc_opt: trainer.disc_opt.clone(),
                config: trainer.config.clone(),
                gen_steps: trainer.gen_steps,
                critic_steps: trainer.critic_steps,
            }),
            seed: trainer.config.seed,
            label: None,
            metadata: serde_json::Value::Null,
        }
    }

    /// Rebuilds the trainer exactly as it was saved.
    pub fn into_trainer(self) -> Result<Trainer<T>> {
        let t = self
            .training
            .ok_or_else(|| Error::contract("checkpoint holds no training state"))?;
        Ok(Trainer {
            generator: self.generator,
            discriminator: t.discriminator,
            gen_opt: t.gen_opt,
            disc_opt: t.disc_opt,
            config: t.config,
            gen_steps: t.gen_steps,
            critic_steps: t.critic_steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenLayerDesc {
    MultiBias { d_in: usize, d_out: usize, num_biases: usize },
    BatchNorm { dim: usize, epsilon: f64, momentum: f64 },
    Activation { activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscLayerDesc {
    Linear { d_in: usize, d_out: usize, power_iterations: usize },
    Activation { activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamDesc {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDesc {
    pub config: TrainConfig,
    pub gen_steps: u64,
    pub critic_steps: u64,
    pub discriminator: Vec<DiscLayerDesc>,
    pub gen_optimizer: AdamDesc,
    pub disc_optimizer: AdamDesc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayDesc {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON block describing everything in the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub precision: Precision,
    pub seed: u64,
    pub d_z: usize,
    pub d_x: usize,
    pub num_biases: usize,
    pub label: Option<String>,
    pub generator: Vec<GenLayerDesc>,
    pub has_optimizer_state: bool,
    pub lambda_schedule: Vec<LambdaStep>,
    pub train: Option<TrainDesc>,
    pub arrays: Vec<ArrayDesc>,
    pub metadata: serde_json::Value,
}

fn gen_descs<T: Scalar>(gen: &Generator<T>) -> Vec<GenLayerDesc> {
    gen.layers()
        .iter()
        .map(|l| match l {
            GenLayer::MultiBias(m) => GenLayerDesc::MultiBias {
                d_in: m.d_in(),
                d_out: m.d_out(),
                num_biases: m.num_biases(),
            },
            GenLayer::BatchNorm(bn) => GenLayerDesc::BatchNorm {
                dim: bn.dim(),
                epsilon: bn.epsilon,
                momentum: bn.momentum,
            },
            GenLayer::Activation(a) => GenLayerDesc::Activation { activation: *a },
        })
        .collect()
}

fn disc_descs<T: Scalar>(disc: &Discriminator<T>) -> Vec<DiscLayerDesc> {
    disc.layers()
        .iter()
        .map(|l| match l {
            DiscLayer::Linear(s) => DiscLayerDesc::Linear {
                d_in: s.d_in(),
                d_out: s.d_out(),
                power_iterations: s.power_iterations,
            },
            DiscLayer::Activation(a) => DiscLayerDesc::Activation { activation: *a },
        })
        .collect()
}

fn arr(name: String, shape: Vec<usize>) -> ArrayDesc {
    ArrayDesc { name, shape }
}

/// Payload layout implied by the layer descriptions.
fn expected_arrays(gen: &[GenLayerDesc], train: Option<&TrainDesc>) -> Vec<ArrayDesc> {
    let mut out = Vec::new();
    let mut gen_params = Vec::new();
    for (k, l) in gen.iter().enumerate() {
        match *l {
            GenLayerDesc::MultiBias { d_in, d_out, num_biases } => {
                out.push(arr(format!("generator.{k}.weight"), vec![d_out, d_in]));
                out.push(arr(format!("generator.{k}.biases"), vec![num_biases, d_out]));
                gen_params.push(vec![d_out, d_in]);
                gen_params.push(vec![num_biases, d_out]);
            }
            GenLayerDesc::BatchNorm { dim, .. } => {
                for name in ["gamma", "beta", "running_mean", "running_var"] {
                    out.push(arr(format!("generator.{k}.{name}"), vec![dim]));
                }
                gen_params.push(vec![dim]);
                gen_params.push(vec![dim]);
            }
            GenLayerDesc::Activation { .. } => {}
        }
    }
    if let Some(t) = train {
        let mut disc_params = Vec::new();
        for (k, l) in t.discriminator.iter().enumerate() {
            if let DiscLayerDesc::Linear { d_in, d_out, .. } = *l {
                out.push(arr(format!("discriminator.{k}.weight"), vec![d_out, d_in]));
                out.push(arr(format!("discriminator.{k}.bias"), vec![d_out]));
                out.push(arr(format!("discriminator.{k}.u"), vec![d_out]));
                out.push(arr(format!("discriminator.{k}.v"), vec![d_in]));
                disc_params.push(vec![d_out, d_in]);
                disc_params.push(vec![d_out]);
            }
        }
        for (who, shapes) in [("generator", &gen_params), ("discriminator", &disc_params)] {
            for moment in ["m", "v"] {
                for (j, s) in shapes.iter().enumerate() {
                    out.push(arr(format!("adam.{who}.{moment}.{j}"), s.clone()));
                }
            }
        }
    }
    out
}

fn payload_tensors<T: Scalar>(ckpt: &Checkpoint<T>) -> Vec<&Tensor<T>> {
    let mut out = Vec::new();
    for l in ckpt.generator.layers() {
        match l {
            GenLayer::MultiBias(m) => {
                out.push(m.weight());
                out.push(m.biases());
            }
            GenLayer::BatchNorm(bn) => {
                out.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
            }
            GenLayer::Activation(_) => {}
        }
    }
    if let Some(t) = &ckpt.training {
        for s in t.discriminator.linears() {
            out.extend([&s.weight, &s.bias, &s.u, &s.v]);
        }
        for opt in [&t.gen_opt, &t.disc_opt] {
            out.extend(opt.m.iter());
            out.extend(opt.v.iter());
        }
    }
    out
}

fn manifest<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Manifest> {
    let generator = gen_descs(&ckpt.generator);
    let train = match &ckpt.training {
        Some(t) => {
            let desc = TrainDesc {
                config: t.config.clone(),
                gen_steps: t.gen_steps,
                critic_steps: t.critic_steps,
                discriminator: disc_descs(&t.discriminator),
                gen_optimizer: AdamDesc { config: t.gen_opt.config, step: t.gen_opt.step },
                disc_optimizer: AdamDesc { config: t.disc_opt.config, step: t.disc_opt.step },
            };
            let gen_shapes = ckpt.generator.param_shapes();
            let disc_shapes = t.discriminator.param_shapes();
            for (who, opt, shapes) in [("generator", &t.gen_opt, &gen_shapes), ("discriminator", &t.disc_opt, &disc_shapes)] {
                let m: Vec<Vec<usize>> = opt.m.iter().map(|x| x.shape().to_vec()).collect();
                let v: Vec<Vec<usize>> = opt.v.iter().map(|x| x.shape().to_vec()).collect();
                if &m != shapes || &v != shapes {
                    return Err(Error::contract(format!("{who} optimizer state does not match its parameters")));
                }
            }
            Some(desc)
        }
        None => None,
    };
    let arrays = expected_arrays(&generator, train.as_ref());
    Ok(Manifest {
        precision: T::PRECISION,
        seed: ckpt.seed,
        d_z: ckpt.generator.d_z(),
        d_x: ckpt.generator.d_x(),
        num_biases: ckpt.generator.num_biases(),
        label: ckpt.label.clone(),
        generator,
        has_optimizer_state: ckpt.training.is_some(),
        lambda_schedule: ckpt
            .training
            .as_ref()
            .map(|t| t.config.lambda_schedule.clone())
            .unwrap_or_default(),
        train,
        arrays,
        metadata: ckpt.metadata.clone(),
    })
}

/// Serializes a checkpoint; identical states give identical bytes.
pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&manifest(ckpt)?)?;
    let tensors = payload_tensors(ckpt);
    let payload_len: usize = tensors.iter().map(|t| t.numel()).sum::<usize>() * T::PRECISION.bytes();
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in tensors {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

/// Writes the checkpoint and flushes it to stable storage before returning.
pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

fn truncated(expected: u64, found: u64) -> Error {
    Error::Format {
        offset: found,
        message: format!("truncated checkpoint: expected {expected} bytes, found {found}"),
    }
}

/// Checks magic, version and byte bookkeeping and returns the manifest with
/// the payload offset. No tensor is built here.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize)> {
    let len = bytes.len() as u64;
    if bytes.len() < HEADER_LEN {
        if !MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
            return Err(Error::Format { offset: 0, message: "bad magic, expected \"ENCG\"".into() });
        }
        return Err(truncated(HEADER_LEN as u64, len));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected \"ENCG\"".into() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let manifest_end = (HEADER_LEN as u64).checked_add(manifest_len).ok_or_else(|| Error::Format {
        offset: 8,
        message: format!("manifest length {manifest_len} overflows"),
    })?;
    if manifest_end > len {
        return Err(truncated(manifest_end, len));
    }
    let manifest_end = manifest_end as usize;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end]).map_err(|e| Error::Format {
        offset: HEADER_LEN as u64,
        message: format!("invalid manifest: {e}"),
    })?;
    let expected = expected_arrays(&manifest.generator, manifest.train.as_ref());
    if manifest.arrays != expected {
        return Err(Error::Format {
            offset: HEADER_LEN as u64,
            message: "manifest array list does not match its layer topology".into(),
        });
    }
    if manifest.has_optimizer_state != manifest.train.is_some() {
        return Err(Error::Format {
            offset: HEADER_LEN as u64,
            message: "optimizer flag disagrees with training section".into(),
        });
    }
    let values: u64 = manifest
        .arrays
        .iter()
        .map(|a| a.shape.iter().product::<usize>() as u64)
        .sum();
    let total = manifest_end as u64 + values * manifest.precision.bytes() as u64;
    if len < total {
        return Err(truncated(total, len));
    }
    if len > total {
        return Err(Error::Format {
            offset: total,
            message: format!("trailing data: expected {total} bytes, found {len}"),
        });
    }
    Ok((manifest, manifest_end))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    precision: Precision,
}

impl Reader<'_> {
    fn tensor<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let width = self.precision.bytes();
        let chunk = &self.bytes[self.pos..self.pos + n * width];
        self.pos += n * width;
        let data = chunk
            .chunks_exact(width)
            .map(|b| match self.precision {
                Precision::F64 => T::c(f64::read_le(b)),
                Precision::F32 => T::c(f32::read_le(b) as f64),
            })
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

/// Parses a checkpoint. Values stored at another precision are converted.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (manifest, start) = read_manifest(bytes)?;
    let mut r = Reader { bytes, pos: start, precision: manifest.precision };
    let mut layers = Vec::with_capacity(manifest.generator.len());
    for l in &manifest.generator {
        layers.push(match *l {
            GenLayerDesc::MultiBias { d_in, d_out, num_biases } => {
                let w = r.tensor(&[d_out, d_in])?;
                let b = r.tensor(&[num_biases, d_out])?;
                GenLayer::MultiBias(MultiBiasLinear::new(w, b)?)
            }
            GenLayerDesc::BatchNorm { dim, epsilon, momentum } => GenLayer::BatchNorm(BatchNorm {
                gamma: r.tensor(&[dim])?,
                beta: r.tensor(&[dim])?,
                running_mean: r.tensor(&[dim])?,
                running_var: r.tensor(&[dim])?,
                epsilon,
                momentum,
            }),
            GenLayerDesc::Activation { activation } => GenLayer::Activation(activation),
        });
    }
    let generator = Generator::new(layers)?;
    if (generator.d_z(), generator.d_x(), generator.num_biases()) != (manifest.d_z, manifest.d_x, manifest.num_biases) {
        return Err(Error::Format {
            offset: HEADER_LEN as u64,
            message: "manifest dimensions disagree with the generator layers".into(),
        });
    }
    let training = match manifest.train {
        Some(t) => {
            let mut disc_layers = Vec::new();
            for l in &t.discriminator {
                disc_layers.push(match *l {
                    DiscLayerDesc::Linear { d_in, d_out, power_iterations } => DiscLayer::Linear(SpectralNormLinear {
                        weight: r.tensor(&[d_out, d_in])?,
                        bias: r.tensor(&[d_out])?,
                        u: r.tensor(&[d_out])?,
                        v: r.tensor(&[d_in])?,
                        power_iterations,
                    }),
                    DiscLayerDesc::Activation { activation } => DiscLayer::Activation(activation),
                });
            }
            let discriminator = Discriminator::new(disc_layers)?;
            let mut adam = |desc: &AdamDesc, shapes: Vec<Vec<usize>>| -> Result<Adam<T>> {
                let m = shapes.iter().map(|s| r.tensor(s)).collect::<Result<Vec<_>>>()?;
                let v = shapes.iter().map(|s| r.tensor(s)).collect::<Result<Vec<_>>>()?;
                Ok(Adam { config: desc.config, step: desc.step, m, v })
            };
            let gen_opt = adam(&t.gen_optimizer, generator.param_shapes())?;
            let disc_opt = adam(&t.disc_optimizer, discriminator.param_shapes())?;
            Some(TrainingState {
                discriminator,
                gen_opt,
                disc_opt,
                config: t.config,
                gen_steps: t.gen_steps,
                critic_steps: t.critic_steps,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        generator,
        training,
        seed: manifest.seed,
        label: manifest.label,
        metadata: manifest.metadata,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
