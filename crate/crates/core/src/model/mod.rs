//! Network construction for TD3Net and its ablation variants.

mod config;
mod network;

pub use config::{cyclic_dilation, reduce, DilationPattern, ModelConfig, Variant, BASELINE_DEPTHS};
pub use network::{ArchGraph, ArchNode, Head, Layer, LayerNode, Network, Outputs, Read, KERNEL};
