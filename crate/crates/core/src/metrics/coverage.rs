use serde::Serialize;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    /// `histogram[i][k]`: samples from bias `i` assigned to manifold `k`.
    pub histogram: Vec<Vec<usize>>,
    /// Largest share of each bias's samples landing on one manifold.
    pub purity: Vec<f64>,
    /// Manifold receiving that share; `None` for a bias with no samples.
    pub dominant: Vec<Option<usize>>,
    /// Every bias has a different dominant manifold.
    pub distinct: bool,
    /// Share of all generated samples assigned to each manifold.
    pub manifold_share: Vec<f64>,
    /// Fraction of manifolds whose share is at least `threshold`.
    pub coverage: f64,
    pub threshold: f64,
}

/// Index of the nearest centroid (squared Euclidean distance).
pub fn nearest_centroid(x: &[f64], centroids: &[Tensor<f64>]) -> usize {
    centroids
        .iter()
        .map(|c| c.data().iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .expect("at least one centroid")
}

/// Assigns each generated sample to the nearest labeled-manifold centroid of
/// `reference` and tabulates assignments per bias.
pub fn manifold_coverage(
    generated: &Tensor<f64>,
    indices: &[usize],
    num_biases: usize,
    reference: &LabeledDataset<f64>,
    threshold: f64,
) -> Result<CoverageReport> {
    let labels = reference
        .labels
        .as_ref()
        .ok_or_else(|| Error::contract("manifold coverage needs a labeled reference"))?;
    let k = reference.num_manifolds.unwrap_or(0);
    if generated.rows() != indices.len() || generated.cols() != reference.dim() {
        return Err(Error::Dimension {
            op: "manifold coverage",
            lhs: vec![indices.len(), reference.dim()],
            rhs: generated.shape().to_vec(),
        });
    }
    if let Some(bad) = indices.iter().find(|&&i| i >= num_biases) {
        return Err(Error::contract(format!("bias index {bad} out of range")));
    }
    let centroids: Vec<Tensor<f64>> = (0..k)
        .map(|m| {
            let rows: Vec<Tensor<f64>> = (0..labels.len())
                .filter(|&i| labels[i] == m)
                .map(|i| reference.sample(i))
                .collect();
            if rows.is_empty() {
                Err(Error::contract(format!("manifold {m} has no reference samples")))
            } else {
                Ok(Tensor::stack_rows(&rows)?.mean_rows())
            }
        })
        .collect::<Result<_>>()?;
    let mut histogram = vec![vec![0usize; k]; num_biases];
    for (r, &i) in indices.iter().enumerate() {
        histogram[i][nearest_centroid(generated.row(r), &centroids)] += 1;
    }
    let mut purity = Vec::with_capacity(num_biases);
    let mut dominant = Vec::with_capacity(num_biases);
    for row in &histogram {
        let total: usize = row.iter().sum();
        match row.iter().enumerate().max_by_key(|(_, &c)| c) {
            Some((m, &c)) if total > 0 => {
                purity.push(c as f64 / total as f64);
                dominant.push(Some(m));
            }
            _ => {
                purity.push(0.0);
                dominant.push(None);
            }
        }
    }
    let mut seen: Vec<usize> = dominant.iter().flatten().copied().collect();
    seen.sort_unstable();
    seen.dedup();
    let distinct = dominant.iter().all(Option::is_some) && seen.len() == num_biases;
    let n = indices.len().max(1) as f64;
    let manifold_share: Vec<f64> = (0..k)
        .map(|m| histogram.iter().map(|row| row[m]).sum::<usize>() as f64 / n)
        .collect();
    let coverage = manifold_share.iter().filter(|&&s| s >= threshold).count() as f64 / k.max(1) as f64;
    Ok(CoverageReport {
        histogram,
        purity,
        dominant,
        distinct,
        manifold_share,
        coverage,
        threshold,
    })
}
