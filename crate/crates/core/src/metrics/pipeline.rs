use serde::Serialize;

use super::disentangle::{disentanglement_score, DisentanglementReport};
use crate::datasets::{apply_transform, LabeledDataset, TransformFamily};
use crate::error::{Error, Result};
use crate::model::{encode, EncodeConfig, Generator};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRun {
    pub report: DisentanglementReport,
    pub family: TransformFamily,
    /// Base images actually used.
    pub images: usize,
    /// Mean squared reconstruction error over all encodings.
    pub mean_reconstruction_error: f64,
}

/// Transforms each of the first `images` samples at every level of the
/// family, encodes every variant, and scores the latent groups (one group
/// per base image). Encoding errors carry the failing image index.
pub fn score_pipeline(
    gen: &Generator<f64>,
    data: &LabeledDataset<f64>,
    family: &TransformFamily,
    images: usize,
    config: &EncodeConfig,
) -> Result<ScoreRun> {
    let n = images.min(data.len());
    if n < 2 {
        return Err(Error::contract(format!("scoring needs at least 2 base images, got {n}")));
    }
    let base = LabeledDataset::new(
        Tensor::stack_rows(&(0..n).map(|i| data.sample(i)).collect::<Vec<_>>())?,
        data.sample_shape.clone(),
        data.labels.as_ref().map(|l| l[..n].to_vec()),
        data.num_manifolds,
    )?;
    let variants = family
        .levels
        .iter()
        .map(|&level| apply_transform(&base, family, level))
        .collect::<Result<Vec<_>>>()?;
    let mut groups = Vec::with_capacity(n);
    let mut err_sum = 0.0;
    for i in 0..n {
        let mut codes = Vec::with_capacity(variants.len());
        for v in &variants {
            let r = encode(gen, &v.sample(i), config).map_err(|e| e.at(i))?;
            err_sum += r.reconstruction_error;
            codes.push(r.z.flatten());
        }
        groups.push(Tensor::stack_rows(&codes)?);
    }
    Ok(ScoreRun {
        report: disentanglement_score(&groups)?,
        family: family.clone(),
        images: n,
        mean_reconstruction_error: err_sum / (n * variants.len()) as f64,
    })
}
