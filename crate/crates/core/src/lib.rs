//! Densely connected multi-dilated temporal convolution networks.
//!
//! The crate bundles a small tensor engine with reverse-mode
//! differentiation ([`tape`]), the TC / bottleneck / multi-dilated layer
//! blocks ([`layers`]), network builders for TD3Net and its ablations
//! ([`model`]), receptive-field and cost analysis ([`analysis`]), and a
//! desk-scale training stack ([`training`]) with a checksummed checkpoint
//! format ([`checkpoint`]).

pub mod analysis;
pub mod checkpoint;
pub mod error;
pub mod features;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use kernels::Padding;
pub use layers::Mode;
pub use model::{ModelConfig, Network, Variant};
pub use scalar::{DType, Scalar};
pub use tape::{NodeId, ParamId, Tape};
pub use tensor::Tensor;
