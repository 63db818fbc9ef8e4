//! Ancestral sampling: z from the prior, a bias index from a uniform selector.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::BnMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::generator::Generator;

/// Standard normal prior over R^d_z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentPrior {
    pub d_z: usize,
}

impl LatentPrior {
    pub fn new(d_z: usize) -> Result<Self> {
        if d_z == 0 {
            return Err(Error::contract("latent dimension must be at least 1"));
        }
        Ok(Self { d_z })
    }

    /// `n` codes as the rows of an `[n × d_z]` matrix.
    pub fn draw<T: Scalar, R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor<T> {
        Tensor::from_fn(&[n, self.d_z], |_| T::c(rng.sample::<f64, _>(StandardNormal)))
    }

    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        let sq: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * sq - 0.5 * self.d_z as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn pdf(&self, z: &[f64]) -> f64 {
        self.log_pdf(z).exp()
    }
}

/// Bias selection with fixed probabilities 1/A.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiasSelector {
    pub num_biases: usize,
}

impl BiasSelector {
    pub fn new(num_biases: usize) -> Result<Self> {
        if num_biases == 0 {
            return Err(Error::contract("bias selector needs at least one bias"));
        }
        Ok(Self { num_biases })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        vec![1.0 / self.num_biases as f64; self.num_biases]
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.num_biases)).collect()
    }
}

/// Samples with the latent codes and bias indices that produced them.
#[derive(Debug, Clone)]
pub struct Samples<T> {
    /// `[n × d_x]`.
    pub x: Tensor<T>,
    /// `[n × d_z]`.
    pub z: Tensor<T>,
    pub indices: Vec<usize>,
}

/// One generated sample as written to NDJSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub row: usize,
    pub bias: usize,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

impl<T: Scalar> Samples<T> {
    pub fn records(&self) -> Vec<SampleRecord> {
        (0..self.x.rows())
            .map(|r| SampleRecord {
                row: r,
                bias: self.indices[r],
                z: self.z.row(r).iter().map(|v| v.f64()).collect(),
                x: self.x.row(r).iter().map(|v| v.f64()).collect(),
            })
            .collect()
    }
}

/// Draws `n` samples `f_G(z; {a_l⁽ⁱ⁾})`, z ~ N(0, I), i ~ Uniform(A).
pub fn sample<T: Scalar, R: Rng + ?Sized>(
    gen: &Generator<T>,
    prior: &LatentPrior,
    selector: &BiasSelector,
    n: usize,
    mode: BnMode,
    rng: &mut R,
) -> Result<Samples<T>> {
    if prior.d_z != gen.d_z() || selector.num_biases != gen.num_biases() {
        return Err(Error::contract(format!(
            "prior/selector ({}, {}) do not match generator ({}, {})",
            prior.d_z,
            selector.num_biases,
            gen.d_z(),
            gen.num_biases()
        )));
    }
    if n == 0 {
        return Err(Error::contract("sample count must be positive"));
    }
    let z = prior.draw(n, rng);
    let indices = selector.draw(n, rng);
    let (x, _) = gen.forward_batch(&z, &indices, mode)?;
    Ok(Samples { x, z, indices })
}

/// Grid with row `i` decoded through bias `i` and column `j` sharing code `z_j`.
pub fn sample_grid<T: Scalar, R: Rng + ?Sized>(
    gen: &Generator<T>,
    columns: usize,
    rng: &mut R,
) -> Result<Samples<T>> {
    let prior = LatentPrior::new(gen.d_z())?;
    let codes: Tensor<T> = prior.draw(columns, rng);
    let a = gen.num_biases();
    let mut z_rows = Vec::with_capacity(a * columns);
    let mut indices = Vec::with_capacity(a * columns);
    for i in 0..a {
        for j in 0..columns {
            z_rows.push(Tensor::vector(codes.row(j).to_vec()));
            indices.push(i);
        }
    }
    let z = Tensor::stack_rows(&z_rows)?;
    let (x, _) = gen.forward_batch(&z, &indices, BnMode::Eval)?;
    Ok(Samples { x, z, indices })
}
