//! Parameterized building blocks: TC layer, bottleneck, multi-dilated TC layer.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::scalar::Scalar;
use crate::tape::{BatchStats, NodeId, ParamId, Tape};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How a forward pass treats normalization, nonlinearity and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
    /// Connectivity-preserving linearization: batch norm and ReLU are the
    /// identity, dropout is off. Used by the receptive-field oracle.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<S> {
    pub name: String,
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatsId(pub usize);

/// Trainable parameters plus batch-norm running buffers, addressed by id
/// and by unique path name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    stats: Vec<RunningStats<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), stats: Vec::new() }
    }

    pub fn add(&mut self, name: String, value: Tensor<S>) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_stats(&mut self, name: String, channels: usize) -> StatsId {
        self.stats.push(RunningStats { name, mean: vec![S::zero(); channels], var: vec![S::one(); channels] });
        StatsId(self.stats.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn stats(&self) -> &[RunningStats<S>] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats<S>] {
        &mut self.stats
    }

    pub fn stats_entry(&self, id: StatsId) -> &RunningStats<S> {
        &self.stats[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Folds one batch's moments into the running statistics.
    pub fn update_stats(&mut self, id: StatsId, batch: &BatchStats<S>) {
        let m = S::of(BN_MOMENTUM);
        let keep = S::one() - m;
        let entry = &mut self.stats[id.0];
        for (r, &b) in entry.mean.iter_mut().zip(&batch.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in entry.var.iter_mut().zip(&batch.var) {
            *r = keep * *r + m * b;
        }
    }
}

/// Draws a `[shape]` tensor from `N(0, 2 / fan_in)`.
pub fn he_normal<S: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Per-forward state: the tape being recorded, the mode, randomness for
/// dropout, and collected side outputs.
pub struct Ctx<'a, S: Scalar> {
    pub tape: &'a mut Tape<S>,
    store: &'a ParamStore<S>,
    pub mode: Mode,
    pub padding: Padding,
    rng: Option<&'a mut dyn RngCore>,
    param_nodes: HashMap<ParamId, NodeId>,
    bn_updates: Vec<(StatsId, BatchStats<S>)>,
    trace: Option<Vec<(String, NodeId)>>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn new(tape: &'a mut Tape<S>, store: &'a ParamStore<S>, mode: Mode, padding: Padding) -> Self {
        Ctx {
            tape,
            store,
            mode,
            padding,
            rng: None,
            param_nodes: HashMap::new(),
            bn_updates: Vec::new(),
            trace: None,
        }
    }

    /// Supplies the dropout random stream; required for train-mode dropout.
    pub fn with_rng(mut self, rng: &'a mut dyn RngCore) -> Self {
        self.rng = Some(rng);
        self
    }

    /// Records every named activation for later lookup.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        if let Some(&n) = self.param_nodes.get(&id) {
            return Ok(n);
        }
        let value = self.store.get(id).value.clone();
        let n = self.tape.param(id, value)?;
        self.param_nodes.insert(id, n);
        Ok(n)
    }

    pub fn record(&mut self, path: &str, node: NodeId) {
        if let Some(t) = &mut self.trace {
            t.push((path.to_string(), node));
        }
    }

    pub fn take_trace(&mut self) -> Vec<(String, NodeId)> {
        self.trace.take().unwrap_or_default()
    }

    pub fn take_bn_updates(&mut self) -> Vec<(StatsId, BatchStats<S>)> {
        std::mem::take(&mut self.bn_updates)
    }

    fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
        }
        if self.mode != Mode::Train || p == 0.0 {
            return Ok(x);
        }
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::usage("train-mode dropout needs a random stream"))?;
        self.tape.dropout(x, p, rng)
    }
}

/// Batch norm parameters plus their running statistics.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
    pub channels: usize,
}

impl Norm {
    pub fn create<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{prefix}.bn.gamma"), Tensor::full(&[channels], S::one()));
        let beta = store.add(format!("{prefix}.bn.beta"), Tensor::zeros(&[channels]));
        let stats = store.add_stats(format!("{prefix}.bn"), channels);
        Norm { gamma, beta, stats, channels }
    }

    /// Batch norm followed by ReLU; both are skipped in [`Mode::Linear`].
    pub fn forward_relu<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: NodeId) -> Result<NodeId> {
        if ctx.mode == Mode::Linear {
            return Ok(x);
        }
        let g = ctx.param(self.gamma)?;
        let b = ctx.param(self.beta)?;
        let y = match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm_train(x, g, b, BN_EPS)?;
                ctx.bn_updates.push((self.stats, stats));
                y
            }
            _ => {
                let rs = ctx.store.stats_entry(self.stats);
                ctx.tape.batch_norm_eval(x, g, b, &rs.mean, &rs.var, BN_EPS)?
            }
        };
        ctx.tape.relu(y)
    }
}

fn make_conv<S: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<S>,
    name: String,
    c_out: usize,
    c_in: usize,
    kernel: usize,
    rng: &mut R,
) -> ParamId {
    store.add(name, he_normal(&[c_out, c_in, kernel], c_in * kernel, rng))
}

/// Dilated convolution, batch norm, ReLU, dropout.
#[derive(Debug, Clone)]
pub struct TcLayer {
    pub path: String,
    pub weight: ParamId,
    pub norm: Norm,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub dropout: f64,
}

impl TcLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn create<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        path: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let weight = make_conv(store, format!("{path}.weight"), c_out, c_in, kernel, rng);
        let norm = Norm::create(store, path, c_out);
        TcLayer { path: path.to_string(), weight, norm, c_in, c_out, kernel, dilation, dropout }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: NodeId) -> Result<NodeId> {
        let c = ctx.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.c_in {
            return Err(Error::config(format!("{}: expected {} input channels, got {c}", self.path, self.c_in)));
        }
        ctx.tape.set_scope(&self.path);
        let w = ctx.param(self.weight)?;
        let y = ctx.tape.conv1d(x, w, self.dilation, ctx.padding)?;
        let y = self.norm.forward_relu(ctx, y)?;
        ctx.dropout(y, self.dropout)
    }
}

/// Kernel-size-1 convolution with batch norm and ReLU, used to change width.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub path: String,
    pub weight: ParamId,
    pub norm: Norm,
    pub c_in: usize,
    pub c_out: usize,
}

impl Bottleneck {
    pub fn create<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        path: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = make_conv(store, format!("{path}.weight"), c_out, c_in, 1, rng);
        let norm = Norm::create(store, path, c_out);
        Bottleneck { path: path.to_string(), weight, norm, c_in, c_out }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: NodeId) -> Result<NodeId> {
        let c = ctx.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.c_in {
            return Err(Error::config(format!("{}: expected {} input channels, got {c}", self.path, self.c_in)));
        }
        ctx.tape.set_scope(&self.path);
        let w = ctx.param(self.weight)?;
        let y = ctx.tape.conv1d(x, w, 1, ctx.padding)?;
        self.norm.forward_relu(ctx, y)
    }
}

/// One branch of a multi-dilated layer: a convolution over a single
/// skip-connected chunk.
#[derive(Debug, Clone)]
pub struct SubConv {
    pub path: String,
    pub weight: ParamId,
    pub c_in: usize,
    pub dilation: usize,
    /// Present only when per-branch normalization is enabled.
    pub norm: Option<Norm>,
}

/// Applies a dedicated dilation to each skip-connected chunk and sums.
///
/// The input stack is `[x_0; x_1; ...; x_l]` with `x_0` of width `bc` and
/// every later chunk of width `k`. Branch `i` convolves chunk `i` at
/// dilation `d_i`; the `k`-wide branch outputs are summed, then one shared
/// BN, ReLU and dropout follow (unless per-branch norm is enabled).
#[derive(Debug, Clone)]
pub struct MultiDilatedLayer {
    pub path: String,
    pub subs: Vec<SubConv>,
    pub norm: Option<Norm>,
    pub growth: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl MultiDilatedLayer {
    /// Builds a layer reading the given chunk widths, one dilation per chunk.
    #[allow(clippy::too_many_arguments)]
    pub fn create<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        path: &str,
        chunk_widths: &[usize],
        dilations: &[usize],
        growth: usize,
        kernel: usize,
        dropout: f64,
        branch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if chunk_widths.len() != dilations.len() || chunk_widths.is_empty() {
            return Err(Error::config(format!("{path}: need one dilation per chunk")));
        }
        let mut subs = Vec::with_capacity(chunk_widths.len());
        for (i, (&c_in, &d)) in chunk_widths.iter().zip(dilations).enumerate() {
            if d == 0 {
                return Err(Error::config(format!("{path}: dilation of branch {i} is 0")));
            }
            let sub_path = format!("{path}/sub.{i}");
            let weight = make_conv(store, format!("{sub_path}.weight"), growth, c_in, kernel, rng);
            let norm = branch_norm.then(|| Norm::create(store, &sub_path, growth));
            subs.push(SubConv { path: sub_path, weight, c_in, dilation: d, norm });
        }
        let norm = (!branch_norm).then(|| Norm::create(store, path, growth));
        Ok(MultiDilatedLayer { path: path.to_string(), subs, norm, growth, kernel, dropout })
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.subs.iter().map(|s| s.dilation).collect()
    }

    pub fn in_channels(&self) -> usize {
        self.subs.iter().map(|s| s.c_in).sum()
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: NodeId) -> Result<NodeId> {
        let c = ctx.tape.shape(x).get(1).copied().unwrap_or(0);
        let expected = self.in_channels();
        if c != expected {
            // name the first chunk that does not fit
            let mut start = 0;
            for (i, s) in self.subs.iter().enumerate() {
                if start + s.c_in > c {
                    return Err(Error::config(format!(
                        "{}: chunk {i} needs channels {start}..{} but input has {c} (expected {expected})",
                        self.path,
                        start + s.c_in
                    )));
                }
                start += s.c_in;
            }
            return Err(Error::config(format!(
                "{}: input has {c} channels, {} left over after chunk {} (expected {expected})",
                self.path,
                c - expected,
                self.subs.len() - 1
            )));
        }
        ctx.tape.set_scope(&self.path);
        let mut outs = Vec::with_capacity(self.subs.len());
        let mut start = 0;
        for s in &self.subs {
            let chunk = if s.c_in == c { x } else { ctx.tape.slice_channels(x, start, s.c_in)? };
            start += s.c_in;
            let w = ctx.param(s.weight)?;
            let y = ctx.tape.conv1d(chunk, w, s.dilation, ctx.padding)?;
            ctx.record(&s.path, y);
            let y = match &s.norm {
                Some(n) => n.forward_relu(ctx, y)?,
                None => y,
            };
            outs.push(y);
        }
        let sum = if outs.len() == 1 { outs[0] } else { ctx.tape.add(&outs)? };
        let y = match &self.norm {
            Some(n) => n.forward_relu(ctx, sum)?,
            None => sum,
        };
        ctx.dropout(y, self.dropout)
    }
}
