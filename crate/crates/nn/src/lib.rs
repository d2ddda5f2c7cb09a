//! Neural building blocks for the second decoding pass: dense, 2-D/1-D
//! convolutional and (bi)LSTM layers with reverse-mode gradients, the
//! activation and optimizer families used in the ablations, and stacked
//! denoising-autoencoder pretraining.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;
pub mod pool;
pub mod recurrent;
pub mod regularize;
pub mod sda;
pub mod serialize;
pub mod tensor;
pub mod train;

pub use activation::Activation;
pub use error::{NnError, Result};
pub use gemm::gemm;
pub use layer::{Layer, LayerSpec};
pub use loss::Loss;
pub use network::Network;
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use regularize::{regularize, Regularizer};
pub use tensor::Tensor;

/// Deterministic generator used throughout training.
pub type NnRng = rand_chacha::ChaCha8Rng;
