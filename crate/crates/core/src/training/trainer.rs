use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::data::{one_hot, Dataset};
use super::mixup::mixup;
use super::optim::{clip_grad_norm, AdamW};
use super::state::{save_state, CheckpointMeta};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::kernels::log_softmax_rows;
use crate::layers::{Ctx, Mode};
use crate::model::{ModelConfig, Network};
use crate::rng::{item_stream, Stream};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Anything that maps an `[N, C, T]` batch to `[N, classes]` logits.
pub trait Predict<S: Scalar> {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>>;
}

impl<S: Scalar> Predict<S> for Network<S> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.predict(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true");
        for j in 0..k {
            s.push_str(&format!(",pred_{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy, mean cross-entropy and confusion matrix in eval mode.
pub fn evaluate<S: Scalar, P: Predict<S>>(model: &P, ds: &Dataset<S>, batch_size: usize) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty dataset"));
    }
    let k = model.num_classes();
    if ds.labels().iter().any(|&l| l >= k) {
        return Err(Error::config(format!("dataset labels exceed the model's {k} classes")));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    let mut loss = 0.0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = ds.batch(chunk);
        let logits = model.logits(&x)?;
        if logits.shape() != [chunk.len(), k] {
            return Err(Error::config(format!("model produced logits of shape {:?}", logits.shape())));
        }
        let logp = log_softmax_rows(logits.data(), k);
        for (i, &y) in labels.iter().enumerate() {
            let row = &logits.data()[i * k..(i + 1) * k];
            confusion[y][argmax(row)] += 1;
            loss -= logp[i * k + y].as_f64();
        }
    }
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let n = ds.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, loss: loss / n, confusion })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_secs: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

impl EpochRecord {
    /// CSV row without the wall-clock column, so identical runs match byte for byte.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.lr, self.train_loss, self.train_acc, self.val_loss, self.val_acc
        )
    }
}

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in log {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub struct TrainRun<S> {
    pub log: Vec<EpochRecord>,
    pub net: Network<S>,
    pub optimizer: AdamW<S>,
    /// State after the epoch with the highest validation accuracy (the
    /// untrained state when no epoch ran).
    pub best: Container,
    pub last: Container,
}

fn annotate(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { scope, detail } => {
            Error::NonFinite { scope, detail: format!("{detail} (epoch {epoch}, step {step})") }
        }
        other => other,
    }
}

/// Result of one optimizer step: mean loss and correct predictions.
#[allow(clippy::too_many_arguments)]
fn train_step<S: Scalar>(
    net: &mut Network<S>,
    opt: &mut AdamW<S>,
    cfg: &TrainConfig,
    x: Tensor<S>,
    labels: &[usize],
    lr: f64,
    mixup_rng: &mut rand_chacha::ChaCha8Rng,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(f64, usize)> {
    let y = one_hot(labels, net.config.num_classes);
    let (xm, ym, _) = mixup(&x, &y, cfg.mixup_alpha, mixup_rng)?;
    let mut tape = Tape::new();
    let (loss, logits, bn) = {
        let mut ctx = Ctx::new(&mut tape, net.store(), Mode::Train, net.config.padding).with_rng(dropout_rng);
        let input = ctx.tape.constant(xm)?;
        let out = net.forward(&mut ctx, input)?;
        let bn = ctx.take_bn_updates();
        let loss = ctx.tape.cross_entropy(out.logits, &ym)?;
        (loss, out.logits, bn)
    };
    let loss_value = tape.value(loss).item().as_f64();
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { scope: "loss".into(), detail: format!("loss is {loss_value}") });
    }
    let k = net.config.num_classes;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(&tape.value(logits).data()[i * k..(i + 1) * k]) == l)
        .count();
    let mut grads = tape.backward(loss)?.into_params();
    if let Some(c) = cfg.grad_clip {
        clip_grad_norm(&mut grads, c);
    }
    opt.step(net.store_mut(), &grads, lr)?;
    for (id, stats) in &bn {
        net.store_mut().update_stats(*id, stats);
    }
    Ok((loss_value, correct))
}

/// Trains from scratch. `on_epoch` sees each log row as it is produced.
pub fn train<S: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &Dataset<S>,
    val_set: &Dataset<S>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainRun<S>> {
    cfg.validate()?;
    let mut model = model.clone();
    if let Some(p) = cfg.dropout_p {
        model.dropout = p;
    }
    model.seed = cfg.seed;
    model.validate()?;
    for (name, ds) in [("training", train_set), ("validation", val_set)] {
        if ds.channels != model.in_channels {
            return Err(Error::config(format!(
                "{name} features have {} channels but the model expects {}",
                ds.channels, model.in_channels
            )));
        }
        if ds.labels().iter().any(|&l| l >= model.num_classes) {
            return Err(Error::config(format!("{name} labels exceed num_classes = {}", model.num_classes)));
        }
    }
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(Error::usage("training set is empty"));
    }
    let mut net: Network<S> = Network::build(&model, cfg.seed)?;
    let mut opt = AdamW::new(net.store(), cfg.weight_decay);
    let meta = |epoch, opt: &AdamW<S>, acc| CheckpointMeta { epoch, seed: cfg.seed, optimizer_step: opt.step, val_accuracy: acc };
    let mut best = save_state(&net, Some(&opt), &meta(0, &opt, None), Some(cfg));
    let mut best_acc = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.epoch_lr(epoch)?;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut item_stream(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut mixup_rng = item_stream(cfg.seed, Stream::Mixup, epoch as u64);
        let mut dropout_rng = item_stream(cfg.seed, Stream::Dropout, epoch as u64);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = train_set.batch(chunk);
            let (l, c) = train_step(&mut net, &mut opt, cfg, x, &labels, lr, &mut mixup_rng, &mut dropout_rng)
                .map_err(|e| annotate(e, epoch + 1, step))?;
            loss_sum += l * chunk.len() as f64;
            correct += c;
            step += 1;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_acc) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let ev = evaluate(&net, val_set, cfg.batch_size.max(64))?;
            (ev.loss, ev.accuracy)
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        if val_acc > best_acc {
            best_acc = val_acc;
            best = save_state(&net, Some(&opt), &meta(epoch + 1, &opt, Some(val_acc)), Some(cfg));
        }
        log.push(rec);
    }
    let last_acc = log.last().map(|r: &EpochRecord| r.val_acc);
    let last = save_state(&net, Some(&opt), &meta(cfg.epochs, &opt, last_acc), Some(cfg));
    Ok(TrainRun { log, net, optimizer: opt, best, last })
}
