//! Architecture search over a stack-machine language of network blocks,
//! with the autodiff engine, pose-estimation environment and latent-space
//! search that drive it.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod autoencoder;
pub mod net;
pub mod nn;
pub mod pose;
pub mod scalar;
pub mod search;
pub mod snap;
pub mod tensor;

pub use scalar::Scalar;

/// Default scalar type.
pub type Real = f64;

pub type Tensor = tensor::Tensor<Real>;
pub type Graph = tensor::Graph<Real>;
pub type ParamSet = tensor::ParamSet<Real>;
pub type Optimizer = tensor::Optimizer<Real>;
pub type SnapNet = net::SnapNet<Real>;
pub type Autoencoder = autoencoder::Autoencoder<Real>;
