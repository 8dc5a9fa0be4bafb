use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Padding;

/// Per-branch dilation schedule inside a multi-dilated layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DilationPattern {
    /// `d_i = 2^i`.
    #[default]
    Exponential,
    /// `d_0 = 1`, `d_i = 2i` for `i >= 1`.
    Linear,
}

impl DilationPattern {
    pub fn dilation(self, index: usize) -> usize {
        match self {
            DilationPattern::Exponential => 1usize << index,
            DilationPattern::Linear => (2 * index).max(1),
        }
    }
}

/// Repeating ladder `2 * (i mod 8) + 1` used by the Dense-TCN and TD2Net baselines.
pub fn cyclic_dilation(index: usize) -> usize {
    2 * (index % 8) + 1
}

/// Block depths of the Dense-TCN and TD2Net baselines.
pub const BASELINE_DEPTHS: [usize; 4] = [6, 12, 24, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Nested TD2 blocks inside TD3 blocks with multi-dilated layers.
    #[default]
    Td3net,
    /// Four sequential TD2 blocks (depths 6/12/24/16), no TD3 nesting.
    Td2net,
    /// Four plain dense blocks (depths 6/12/24/16) of dilated TC layers.
    DenseTcn,
    /// TD3Net with every dilation set to 1.
    NoDilation,
    /// TD3Net where all branches of layer `l` share the pattern's largest
    /// dilation for that layer.
    StandardDilation,
}

fn default_ratio() -> f64 {
    0.5
}
fn default_in_channels() -> usize {
    512
}
fn default_num_classes() -> usize {
    500
}
fn default_seq_len() -> usize {
    29
}
fn default_dropout() -> f64 {
    0.2
}

/// Architecture description from which a network is built deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of TD3 blocks.
    pub b: usize,
    /// TD2 blocks per TD3 block.
    pub n: usize,
    /// Multi-dilated layers per TD2 block.
    pub l: usize,
    /// Growth rate.
    pub k: usize,
    /// Compression ratio of every TD3 block but the last.
    #[serde(default = "default_ratio")]
    pub c: f64,
    /// Transition ratio of every TD2 block.
    #[serde(default = "default_ratio")]
    pub t: f64,
    /// Width of the TD2 input bottleneck; `4 * k` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<usize>,
    #[serde(default)]
    pub pattern: DilationPattern,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    /// Normalize each branch of a multi-dilated layer separately instead of
    /// once after the sum. Not part of the file schema.
    #[serde(skip)]
    pub branch_norm: bool,
}

impl ModelConfig {
    /// A TD3Net with the given block counts and defaults elsewhere.
    pub fn td3net(b: usize, n: usize, l: usize, k: usize) -> Self {
        ModelConfig {
            b,
            n,
            l,
            k,
            c: 0.5,
            t: 0.5,
            bc: None,
            pattern: DilationPattern::Exponential,
            variant: Variant::Td3net,
            in_channels: 512,
            num_classes: 500,
            seq_len: 29,
            padding: Padding::Same,
            dropout: 0.2,
            seed: 0,
            branch_norm: false,
        }
    }

    /// B=4, N=10, L=5, k=36.
    pub fn base() -> Self {
        Self::td3net(4, 10, 5, 36)
    }

    /// Base with k=48.
    pub fn best() -> Self {
        Self::td3net(4, 10, 5, 48)
    }

    /// B=2, N=2, L=3, k=8.
    pub fn tiny() -> Self {
        Self::td3net(2, 2, 3, 8)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn bottleneck_width(&self) -> usize {
        self.bc.unwrap_or(4 * self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b * self.n * self.l == 0 {
            return Err(Error::config("b, n and l must all be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::config(format!("c = {} must lie in (0, 1]", self.c)));
        }
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(Error::config(format!("t = {} must lie in (0, 1]", self.t)));
        }
        if self.bottleneck_width() == 0 {
            return Err(Error::config("bc must be at least 1"));
        }
        if self.in_channels == 0 || self.num_classes == 0 || self.seq_len == 0 {
            return Err(Error::config("in_channels, num_classes and seq_len must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout = {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    /// Dilation of branch `index` in multi-dilated layer `layer`.
    pub fn branch_dilation(&self, layer: usize, index: usize) -> usize {
        match self.variant {
            Variant::Td3net => self.pattern.dilation(index),
            Variant::NoDilation => 1,
            Variant::StandardDilation => self.pattern.dilation(layer),
            Variant::Td2net | Variant::DenseTcn => cyclic_dilation(index),
        }
    }
}

/// `floor(channels * ratio)`, rejecting widths below one.
pub fn reduce(channels: usize, ratio: f64, what: &str) -> Result<usize> {
    let out = (channels as f64 * ratio + 1e-9).floor() as usize;
    if out == 0 {
        return Err(Error::config(format!("{what}: floor({channels} * {ratio}) = 0 channels")));
    }
    Ok(out)
}
