use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Half-length of every segment along the shared tangential axis.
const SEGMENT_HALF_LENGTH: f64 = 0.8;
/// Radius of the outermost arc.
const OUTER_RADIUS: f64 = 0.9;
/// Angular extent of each arc.
const ARC_SPAN: f64 = 1.5 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub segments: usize,
    pub n_per: usize,
    pub d_x: usize,
    pub separation: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub arcs: usize,
    pub n_per: usize,
    pub radius_spread: f64,
    pub noise_sd: f64,
}

fn noise(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::contract(format!("noise_sd {sd}: {e}")))
}

/// `segments` parallel line segments along axis 0, segment `k` offset by
/// `k·separation` along axis 1, plus isotropic Gaussian noise. The whole set
/// is scaled uniformly into `[-1, 1]` only if some coordinate leaves it.
pub fn gen_parallel_segments(
    segments: usize,
    n_per: usize,
    d_x: usize,
    separation: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledDataset<f64>> {
    if segments == 0 || n_per == 0 {
        return Err(Error::contract("need at least one segment and one point per segment"));
    }
    if d_x < 2 {
        return Err(Error::contract(format!("segments need d_x >= 2, got {d_x}")));
    }
    if !(separation > 0.0) || !(noise_sd >= 0.0) {
        return Err(Error::contract("separation must be positive and noise_sd nonnegative"));
    }
    let mut rng = stream_rng(seed, Stream::Dataset, 0);
    let along = Uniform::new_inclusive(-SEGMENT_HALF_LENGTH, SEGMENT_HALF_LENGTH).expect("valid range");
    let eps = noise(noise_sd)?;
    let n = segments * n_per;
    let mut data = Vec::with_capacity(n * d_x);
    let mut labels = Vec::with_capacity(n);
    for k in 0..segments {
        for _ in 0..n_per {
            for j in 0..d_x {
                let base = match j {
                    0 => along.sample(&mut rng),
                    1 => k as f64 * separation,
                    _ => 0.0,
                };
                let e = if noise_sd > 0.0 { eps.sample(&mut rng) } else { 0.0 };
                data.push(base + e);
            }
            labels.push(k);
        }
    }
    let peak = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        data.iter_mut().for_each(|v| *v /= peak);
    }
    LabeledDataset::new(Tensor::matrix(n, d_x, data)?, vec![d_x], Some(labels), Some(segments))
}

impl SegmentSpec {
    pub fn generate(&self, seed: u64) -> Result<LabeledDataset<f64>> {
        gen_parallel_segments(self.segments, self.n_per, self.d_x, self.separation, self.noise_sd, seed)
    }
}

/// Radii of the concentric arcs: `0.9 − k·spread`.
pub fn arc_radii(arcs: usize, radius_spread: f64) -> Vec<f64> {
    (0..arcs).map(|k| OUTER_RADIUS - k as f64 * radius_spread).collect()
}

/// `arcs` concentric partial circles in the plane, each covering the angles
/// `[0, 1.5π]`, with Gaussian noise; values clamped to `[-1, 1]`.
pub fn gen_disconnected_arcs(
    arcs: usize,
    n_per: usize,
    radius_spread: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledDataset<f64>> {
    if arcs == 0 || n_per == 0 {
        return Err(Error::contract("need at least one arc and one point per arc"));
    }
    let radii = arc_radii(arcs, radius_spread);
    if arcs > 1 && !(radius_spread > 0.0) {
        return Err(Error::contract("radius_spread must be positive"));
    }
    if radii.last().is_some_and(|&r| r <= 0.0) {
        return Err(Error::contract(format!(
            "{arcs} arcs with spread {radius_spread} reach a nonpositive radius"
        )));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::contract("noise_sd must be nonnegative"));
    }
    let mut rng = stream_rng(seed, Stream::Dataset, 1);
    let eps = noise(noise_sd)?;
    let angle = Uniform::new_inclusive(0.0, ARC_SPAN).expect("valid range");
    let mut data = Vec::with_capacity(arcs * n_per * 2);
    let mut labels = Vec::with_capacity(arcs * n_per);
    for (k, &r) in radii.iter().enumerate() {
        for _ in 0..n_per {
            let t: f64 = rng.sample(angle);
            for base in [r * t.cos(), r * t.sin()] {
                let e = if noise_sd > 0.0 { eps.sample(&mut rng) } else { 0.0 };
                data.push((base + e).clamp(-1.0, 1.0));
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(Tensor::matrix(arcs * n_per, 2, data)?, vec![2], Some(labels), Some(arcs))
}

impl ArcSpec {
    pub fn generate(&self, seed: u64) -> Result<LabeledDataset<f64>> {
        gen_disconnected_arcs(self.arcs, self.n_per, self.radius_spread, self.noise_sd, seed)
    }
}

/// Index of the circle `‖p‖ = r_k` closest to a planar point.
pub fn nearest_arc(point: &[f64], radii: &[f64]) -> usize {
    let rho = point[0].hypot(point[1]);
    radii
        .iter()
        .enumerate()
        .min_by(|a, b| (rho - a.1).abs().total_cmp(&(rho - b.1).abs()))
        .map(|(k, _)| k)
        .expect("at least one radius")
}
