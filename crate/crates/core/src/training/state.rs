//! Network and optimizer state in a [`Container`].
//!
//! Tensors are stored under `param/<name>`, `stats/<name>/mean`,
//! `stats/<name>/var`, `adam/m/<name>` and `adam/v/<name>`. Random streams
//! are derived from the seed and the epoch counter, so those two values
//! are the complete generator state.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamW;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub optimizer_step: u64,
    pub val_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Blob {
    meta: CheckpointMeta,
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
}

pub fn save_state<S: Scalar>(
    net: &Network<S>,
    opt: Option<&AdamW<S>>,
    meta: &CheckpointMeta,
    train: Option<&TrainConfig>,
) -> Container {
    let blob = Blob { meta: meta.clone(), model: net.config.clone(), train: train.cloned() };
    let mut c = Container::new(toml::to_string(&blob).expect("checkpoint metadata serializes"));
    let store = net.store();
    for p in store.params() {
        c.push(format!("param/{}", p.name), &p.value);
    }
    for s in store.stats() {
        let n = s.mean.len();
        c.push(format!("stats/{}/mean", s.name), &Tensor::new(vec![n], s.mean.clone()).expect("rank 1"));
        c.push(format!("stats/{}/var", s.name), &Tensor::new(vec![n], s.var.clone()).expect("rank 1"));
    }
    if let Some(opt) = opt {
        for (i, p) in store.params().iter().enumerate() {
            let shape = p.value.shape().to_vec();
            c.push(format!("adam/m/{}", p.name), &Tensor::new(shape.clone(), opt.m[i].clone()).expect("moment shape"));
            c.push(format!("adam/v/{}", p.name), &Tensor::new(shape, opt.v[i].clone()).expect("moment shape"));
        }
    }
    c
}

fn parse_blob(c: &Container) -> Result<Blob> {
    toml::from_str(&c.config).map_err(|e| Error::Corrupt(format!("checkpoint metadata: {}", e.message())))
}

fn tensor<S: Scalar>(c: &Container, name: &str, shape: &[usize]) -> Result<Tensor<S>> {
    let t = c.require(name)?;
    if t.shape() != shape {
        return Err(Error::Corrupt(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape())));
    }
    Ok(t.to_tensor())
}

/// Rebuilds the network stored in a checkpoint.
pub fn load_network<S: Scalar>(c: &Container) -> Result<(Network<S>, CheckpointMeta)> {
    let blob = parse_blob(c)?;
    let mut net = Network::build(&blob.model, blob.meta.seed)?;
    let store = net.store_mut();
    for p in store.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = tensor(c, &format!("param/{}", p.name), &shape)?;
    }
    for s in store.stats_mut() {
        let n = s.mean.len();
        s.mean = tensor(c, &format!("stats/{}/mean", s.name), &[n])?.into_data();
        s.var = tensor(c, &format!("stats/{}/var", s.name), &[n])?.into_data();
    }
    Ok((net, blob.meta))
}

/// Optimizer moments, when the checkpoint carries them.
pub fn load_optimizer<S: Scalar>(c: &Container, net: &Network<S>) -> Result<Option<AdamW<S>>> {
    let blob = parse_blob(c)?;
    let store = net.store();
    let Some(first) = store.params().first() else { return Ok(None) };
    if c.get(&format!("adam/m/{}", first.name)).is_none() {
        return Ok(None);
    }
    let wd = blob.train.as_ref().map_or(0.0, |t| t.weight_decay);
    let mut opt = AdamW::new(store, wd);
    opt.step = blob.meta.optimizer_step;
    for (i, p) in store.params().iter().enumerate() {
        opt.m[i] = tensor(c, &format!("adam/m/{}", p.name), p.value.shape())?.into_data();
        opt.v[i] = tensor(c, &format!("adam/v/{}", p.name), p.value.shape())?.into_data();
    }
    Ok(Some(opt))
}

pub fn train_config(c: &Container) -> Result<Option<TrainConfig>> {
    Ok(parse_blob(c)?.train)
}
