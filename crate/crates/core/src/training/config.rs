use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::SyntheticSpec;
use crate::error::{Error, Result};

/// Where training and validation samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Files { train: PathBuf, val: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr_init")]
    pub lr_init: f64,
    #[serde(default = "defaults::lr_final")]
    pub lr_final: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    /// Beta(alpha, alpha) mixup; 0 disables it.
    #[serde(default = "defaults::mixup_alpha")]
    pub mixup_alpha: f64,
    /// Overrides the model's dropout probability when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_p: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm cap; off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub dataset: DatasetSpec,
}

mod defaults {
    pub fn epochs() -> usize {
        30
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn lr_init() -> f64 {
        3e-4
    }
    pub fn lr_final() -> f64 {
        5e-8
    }
    pub fn weight_decay() -> f64 {
        1e-2
    }
    pub fn mixup_alpha() -> f64 {
        0.4
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            lr_init: defaults::lr_init(),
            lr_final: defaults::lr_final(),
            weight_decay: defaults::weight_decay(),
            mixup_alpha: defaults::mixup_alpha(),
            dropout_p: None,
            seed: 0,
            grad_clip: None,
            dataset: DatasetSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size: must be positive"));
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::config("lr_init, lr_final: must be positive"));
        }
        if self.lr_final >= self.lr_init {
            return Err(Error::config(format!(
                "lr_final: {} must be below lr_init {}",
                self.lr_final, self.lr_init
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay: must be non-negative"));
        }
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return Err(Error::config("mixup_alpha: must be non-negative"));
        }
        if let Some(p) = self.dropout_p {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("dropout_p: {p} outside [0, 1)")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("grad_clip: must be positive"));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn epoch_lr(&self, epoch: usize) -> Result<f64> {
        if self.epochs <= 1 {
            return Ok(self.lr_init);
        }
        super::schedule::cosine_lr(epoch, self.epochs - 1, self.lr_init, self.lr_final)
    }
}
