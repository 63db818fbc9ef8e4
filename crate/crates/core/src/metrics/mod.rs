//! Evaluation: disentanglement score, bias-alignment diagnostics, manifold
//! coverage, pushforward density and SVG charts.

mod alignment;
mod coverage;
mod density;
mod disentangle;
mod pipeline;
pub mod svg;

pub use alignment::{alignment_report, recovery_consistency, AlignmentReport, LayerAlignment, RecoveryConsistency};
pub use coverage::{manifold_coverage, nearest_centroid, CoverageReport};
pub use density::{autodiff_jacobian, finite_difference_jacobian, pushforward_density, Density, GeneratorMap, GraphMap, LatentMap};
pub use disentangle::{disentanglement_score, DisentanglementReport, EPS_EIG};
pub use pipeline::{score_pipeline, ScoreRun};
