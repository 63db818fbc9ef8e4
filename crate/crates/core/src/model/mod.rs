//! Generator, critic, losses and the training loop.

pub mod discriminator;
pub mod generator;
pub mod loss;
pub mod regularizer;
pub mod sampling;
pub mod train;

pub use discriminator::{DiscBinding, DiscLayer, Discriminator};
pub use generator::{GenBinding, GenLayer, GenPass, Generator, MlpSpec};
pub use loss::{losses, Losses};
pub use regularizer::{
    bias_regularizer, per_layer_regularizer, prop1_check, prop1_layers, recover_encoder, Prop1Report,
    RecoveredLayer, EPS_REG,
};
pub use sampling::{sample, sample_grid, BiasSelector, LatentPrior, SampleRecord, Samples};
pub use train::{LambdaStep, MetricRecord, StepRecord, TrainConfig, Trainer};
pub mod encode;
pub use encode::{encode, style_transfer, EncodeConfig, EncodeResult, Start, StartOutcome, Transfer};
