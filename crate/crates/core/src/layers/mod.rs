//! Generator and critic building blocks. Generator-side layers invert in
//! closed form.

mod activation;
mod batch_norm;
mod multi_bias;
mod spectral;

pub use activation::{Activation, TANH_CLAMP};
pub use batch_norm::{BatchNorm, BatchNormNodes, BatchStats, BnMode};
pub use multi_bias::{LinearEncoder, MultiBiasLinear, MultiBiasNodes, DEFAULT_BIAS_SD};
pub use spectral::{SpectralEstimate, SpectralNormLinear, SpectralNodes, SIGMA_FLOOR};
