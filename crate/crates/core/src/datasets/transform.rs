use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value used for pixels sampled from outside the canvas.
const BACKGROUND: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Horizontal skew; level is the angle in degrees.
    Shear,
    /// Horizontal scale about the image center; level is the factor.
    Width,
    /// Additive pixel shift clamped to `[-1, 1]`.
    Brightness,
}

impl TransformKind {
    pub fn identity(self) -> f64 {
        match self {
            TransformKind::Width => 1.0,
            TransformKind::Shear | TransformKind::Brightness => 0.0,
        }
    }

    /// Default symmetric range about the identity.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            TransformKind::Shear => (-25.0, 25.0),
            TransformKind::Width => (0.75, 1.25),
            TransformKind::Brightness => (-0.5, 0.5),
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shear" => Ok(Self::Shear),
            "width" => Ok(Self::Width),
            "brightness" => Ok(Self::Brightness),
            other => Err(Error::Config(vec![format!(
                "transform: unknown kind {other:?} (expected shear, width or brightness)"
            )])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformFamily {
    pub kind: TransformKind,
    /// Strictly increasing magnitudes including the identity.
    pub levels: Vec<f64>,
}

impl TransformFamily {
    pub fn new(kind: TransformKind, levels: Vec<f64>) -> Result<Self> {
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::contract("transform levels must be strictly increasing"));
        }
        if !levels.contains(&kind.identity()) {
            return Err(Error::contract(format!(
                "transform levels must include the identity {}",
                kind.identity()
            )));
        }
        if kind == TransformKind::Width && levels.first().is_some_and(|&l| l <= 0.0) {
            return Err(Error::contract("width factors must be positive"));
        }
        if kind == TransformKind::Shear && levels.iter().any(|l| l.abs() >= 90.0) {
            return Err(Error::contract("shear angles must lie strictly inside ±90°"));
        }
        Ok(Self { kind, levels })
    }

    /// `count` evenly spaced levels over the default range; `count` must be
    /// odd so the middle level is the identity.
    pub fn standard(kind: TransformKind, count: usize) -> Result<Self> {
        if count.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "{count} levels cannot be symmetric about the identity"
            )));
        }
        let (lo, hi) = kind.default_range();
        let mid = kind.identity();
        let half = (count / 2) as f64;
        let levels = (0..count)
            .map(|k| {
                let t = k as f64 - half;
                if half == 0.0 {
                    mid
                } else if t < 0.0 {
                    mid + (mid - lo) * t / half
                } else {
                    mid + (hi - mid) * t / half
                }
            })
            .collect();
        Self::new(kind, levels)
    }
}

fn bilinear(img: &[f64], rows: usize, cols: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |r: f64, c: f64| {
        if r < 0.0 || c < 0.0 || r >= rows as f64 || c >= cols as f64 {
            BACKGROUND
        } else {
            img[r as usize * cols + c as usize]
        }
    };
    let top = if fx == 0.0 { at(y0, x0) } else { (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0) };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        at(y0 + 1.0, x0)
    } else {
        (1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0)
    };
    (1.0 - fy) * top + fy * bottom
}

/// Resamples one image through the inverse map `out(r, c) = in(r, src(r, c))`.
fn resample(img: &[f64], rows: usize, cols: usize, src: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(bilinear(img, rows, cols, r as f64, src(r as f64, c as f64)));
        }
    }
    out
}

pub fn transform_image(img: &[f64], rows: usize, cols: usize, kind: TransformKind, level: f64) -> Vec<f64> {
    let rc = (rows as f64 - 1.0) / 2.0;
    let cc = (cols as f64 - 1.0) / 2.0;
    match kind {
        TransformKind::Shear => {
            let t = level.to_radians().tan();
            resample(img, rows, cols, |r, c| c + t * (r - rc))
        }
        TransformKind::Width => resample(img, rows, cols, |_, c| cc + (c - cc) / level),
        TransformKind::Brightness => img.iter().map(|v| (v + level).clamp(-1.0, 1.0)).collect(),
    }
}

/// Applies one transform level to every sample; labels are preserved.
pub fn apply_transform(ds: &LabeledDataset<f64>, family: &TransformFamily, level: f64) -> Result<LabeledDataset<f64>> {
    let (lo, hi) = (family.levels[0], *family.levels.last().expect("nonempty"));
    if !(lo..=hi).contains(&level) {
        return Err(Error::contract(format!(
            "level {level} outside the family range [{lo}, {hi}]"
        )));
    }
    let (rows, cols) = match (family.kind, ds.sample_shape.as_slice()) {
        (TransformKind::Brightness, _) => (1, ds.dim()),
        (_, &[r, c]) if r == c => (r, c),
        (_, shape) => {
            return Err(Error::contract(format!(
                "{:?} needs square images, got sample shape {shape:?}",
                family.kind
            )))
        }
    };
    let mut data = Vec::with_capacity(ds.len() * ds.dim());
    for i in 0..ds.len() {
        data.extend(transform_image(ds.samples.row(i), rows, cols, family.kind, level));
    }
    LabeledDataset::new(
        Tensor::matrix(ds.len(), ds.dim(), data)?,
        ds.sample_shape.clone(),
        ds.labels.clone(),
        ds.num_manifolds,
    )
}
