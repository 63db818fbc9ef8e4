use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, RANK_TOLERANCE};
use crate::tensor::Tensor;

/// Added to the second eigenvalue in the score denominator.
pub const EPS_EIG: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisentanglementReport {
    /// `λ₁ / (λ₂ + ε)`.
    pub score: f64,
    pub principal_direction: Vec<f64>,
    /// Eigenvalues of the pooled within-group covariance, descending.
    pub spectrum: Vec<f64>,
    /// Fewer than two eigenvalues above the rank tolerance.
    pub saturated: bool,
    pub warning: Option<String>,
    pub groups: usize,
    pub codes_per_group: usize,
}

/// Centers each group of latent codes on its own mean, pools all centered
/// codes into one covariance (denominator `N − G`) and scores the ratio of
/// its two leading eigenvalues.
pub fn disentanglement_score(groups: &[Tensor<f64>]) -> Result<DisentanglementReport> {
    if groups.len() < 2 {
        return Err(Error::contract(format!("need at least 2 groups, got {}", groups.len())));
    }
    let t = groups[0].rows();
    let d = groups[0].cols();
    for (k, g) in groups.iter().enumerate() {
        if g.shape().len() != 2 || g.rows() != t || g.cols() != d {
            return Err(Error::Dimension {
                op: "disentanglement group",
                lhs: vec![t, d],
                rhs: g.shape().to_vec(),
            })
            .map_err(|e| Error::contract(format!("group {k}: {e}")));
        }
    }
    if t < 2 {
        return Err(Error::contract("each group needs at least 2 codes"));
    }
    let mut cov = Tensor::<f64>::zeros(&[d, d]);
    for g in groups {
        let mean = g.mean_rows();
        for r in 0..t {
            let row: Vec<f64> = g.row(r).iter().zip(mean.data()).map(|(a, m)| a - m).collect();
            let data = cov.data_mut();
            for i in 0..d {
                for j in 0..d {
                    data[i * d + j] += row[i] * row[j];
                }
            }
        }
    }
    let dof = (groups.len() * t - groups.len()) as f64;
    let cov = cov.scale(1.0 / dof);
    let eig = sym_eigen(&cov)?;
    let spectrum = eig.values.to_f64_vec();
    let l1 = spectrum[0];
    let l2 = spectrum.get(1).copied().unwrap_or(0.0).max(0.0);
    let saturated = !(l1 > 0.0) || l2 <= RANK_TOLERANCE * l1;
    let warning = saturated.then(|| {
        "degenerate spectrum: fewer than 2 nonzero eigenvalues; score saturates at λ₁/ε".to_string()
    });
    Ok(DisentanglementReport {
        score: l1 / (l2 + EPS_EIG),
        principal_direction: eig.vectors.column(0).to_f64_vec(),
        spectrum,
        saturated,
        warning,
        groups: groups.len(),
        codes_per_group: t,
    })
}
