// Validation uses `!(x > bound)` on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod datasets;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod persistio;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Generator64 = model::Generator<f64>;
pub type Generator32 = model::Generator<f32>;
