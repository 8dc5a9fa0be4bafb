//! Reverse-mode differentiation over a linear tape.
//!
//! Each operation appends a node holding its output value and whatever the
//! backward rule needs. [`Tape::backward`] replays the tape once in reverse.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index into a network's parameter registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

enum Op<S> {
    Leaf,
    Conv1d { x: NodeId, w: NodeId, dims: ConvDims },
    SliceChannels { x: NodeId, start: usize },
    Concat { parts: Vec<NodeId> },
    Add { parts: Vec<NodeId> },
    BatchNormTrain { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<S>, inv_std: Vec<S> },
    BatchNormEval { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<S>, inv_std: Vec<S> },
    Relu { x: NodeId },
    Dropout { x: NodeId, mask: Vec<S> },
    MeanTime { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Mul { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    CrossEntropy { logits: NodeId, probs: Vec<S>, targets: Vec<S> },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    scope: usize,
}

/// Batch statistics observed by a train-mode batch norm, to be folded into
/// running statistics by the caller.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Unbiased variance.
    pub var: Vec<S>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<S> {
    params: Vec<(ParamId, Tensor<S>)>,
    nodes: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn params(&self) -> &[(ParamId, Tensor<S>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor<S>)> {
        self.params
    }

    /// Gradient of any node that required one; `None` if it was not on a
    /// path to the loss.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: Vec<(ParamId, NodeId)>,
    scopes: Vec<String>,
    current_scope: usize,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            scopes: vec![String::from("<root>")],
            current_scope: 0,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names the layer that subsequent operations belong to; used in
    /// non-finite diagnostics.
    pub fn set_scope(&mut self, name: &str) {
        if let Some(i) = self.scopes.iter().position(|s| s == name) {
            self.current_scope = i;
        } else {
            self.scopes.push(name.to_string());
            self.current_scope = self.scopes.len() - 1;
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool, what: &str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                scope: self.scopes[self.current_scope].clone(),
                detail: format!("{what} output"),
            });
        }
        self.nodes.push(Node { value, op, requires_grad, scope: self.current_scope });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn grad_of(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// A leaf whose gradient is reported through [`Gradients::node`].
    pub fn variable(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push(value, Op::Leaf, true, "variable")
    }

    /// A trainable parameter; always reported in [`Gradients::params`].
    pub fn param(&mut self, id: ParamId, value: Tensor<S>) -> Result<NodeId> {
        let node = self.push(value, Op::Leaf, true, "parameter")?;
        self.params.push((id, node));
        Ok(node)
    }

    /// Dilated 1D convolution of `[N, C_in, T]` by `[C_out, C_in, K]`, no bias.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, dilation: usize, padding: Padding) -> Result<NodeId> {
        let (batch, c_in, len) = self.value(x).nct()?;
        let ws = self.shape(w).to_vec();
        let [c_out, wc_in, kernel] = ws[..] else {
            return Err(Error::config(format!("conv weight must be [C_out, C_in, K], got {ws:?}")));
        };
        if wc_in != c_in {
            return Err(Error::config(format!(
                "conv input has {c_in} channels but weight expects {wc_in}"
            )));
        }
        if dilation == 0 {
            return Err(Error::config("dilation must be at least 1"));
        }
        if padding == Padding::Same && kernel % 2 == 0 {
            return Err(Error::config(format!("same padding needs an odd kernel, got {kernel}")));
        }
        let dims = ConvDims { batch, c_in, c_out, len, kernel, dilation, padding };
        let mut out = vec![S::zero(); batch * c_out * len];
        kernels::conv1d_forward(self.value(x).data(), self.value(w).data(), dims, &mut out);
        let value = Tensor::new(vec![batch, c_out, len], out)?;
        let rg = self.grad_of(&[x, w]);
        self.push(value, Op::Conv1d { x, w, dims }, rg, "conv1d")
    }

    /// Channels `start..start+count` of an `[N, C, T]` value.
    pub fn slice_channels(&mut self, x: NodeId, start: usize, count: usize) -> Result<NodeId> {
        let (batch, ch, len) = self.value(x).nct()?;
        if count == 0 || start + count > ch {
            return Err(Error::config(format!(
                "channel slice {start}..{} out of range for {ch} channels",
                start + count
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * count * len);
        for b in 0..batch {
            out.extend_from_slice(&src[(b * ch + start) * len..(b * ch + start + count) * len]);
        }
        let value = Tensor::new(vec![batch, count, len], out)?;
        let rg = self.grad_of(&[x]);
        self.push(value, Op::SliceChannels { x, start }, rg, "slice")
    }

    /// Channel-axis concatenation of `[N, C_i, T]` values.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::config("concat of zero tensors"));
        }
        let (batch, _, len) = self.value(parts[0]).nct()?;
        let mut total = 0;
        for &p in parts {
            let (b, c, t) = self.value(p).nct()?;
            if b != batch || t != len {
                return Err(Error::config(format!(
                    "concat expects matching batch/time, got {:?} and {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                )));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(batch * total * len);
        for b in 0..batch {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                out.extend_from_slice(&v.data()[b * c * len..(b + 1) * c * len]);
            }
        }
        let value = Tensor::new(vec![batch, total, len], out)?;
        let rg = self.grad_of(parts);
        self.push(value, Op::Concat { parts: parts.to_vec() }, rg, "concat")
    }

    /// Element-wise sum of equally shaped values.
    pub fn add(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::config("add of zero tensors"));
        }
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let v = self.value(p);
            if v.shape() != acc.shape() {
                return Err(Error::config(format!(
                    "add shape mismatch {:?} vs {:?}",
                    acc.shape(),
                    v.shape()
                )));
            }
            acc.add_assign(v);
        }
        let rg = self.grad_of(parts);
        self.push(acc, Op::Add { parts: parts.to_vec() }, rg, "add")
    }

    /// Train-mode batch norm: normalizes each channel over batch and time.
    /// Returns the batch moments for the running-statistics update.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BatchStats<S>)> {
        let (batch, ch, len) = self.value(x).nct()?;
        self.check_channel_vec(gamma, ch)?;
        self.check_channel_vec(beta, ch)?;
        let xs = self.value(x).data();
        let (mean, var) = kernels::channel_moments(xs, batch, ch, len);
        let eps = S::of(eps);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![S::zero(); xs.len()];
        let mut out = vec![S::zero(); xs.len()];
        for b in 0..batch {
            for c in 0..ch {
                let base = (b * ch + c) * len;
                for i in base..base + len {
                    let h = (xs[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let m = batch * len;
        let unbias = if m > 1 { S::of(m as f64 / (m - 1) as f64) } else { S::one() };
        let stats = BatchStats { mean: mean.clone(), var: var.iter().map(|&v| v * unbias).collect() };
        let value = Tensor::new(vec![batch, ch, len], out)?;
        let rg = self.grad_of(&[x, gamma, beta]);
        let id = self.push(value, Op::BatchNormTrain { x, gamma, beta, xhat, inv_std }, rg, "batch_norm")?;
        Ok((id, stats))
    }

    /// Eval-mode batch norm using fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> Result<NodeId> {
        let (batch, ch, len) = self.value(x).nct()?;
        self.check_channel_vec(gamma, ch)?;
        self.check_channel_vec(beta, ch)?;
        if running_mean.len() != ch || running_var.len() != ch {
            return Err(Error::config("running statistics do not match channel count"));
        }
        let eps = S::of(eps);
        let inv_std: Vec<S> = running_var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![S::zero(); xs.len()];
        for b in 0..batch {
            for c in 0..ch {
                let base = (b * ch + c) * len;
                for i in base..base + len {
                    out[i] = g[c] * (xs[i] - running_mean[c]) * inv_std[c] + bt[c];
                }
            }
        }
        let value = Tensor::new(vec![batch, ch, len], out)?;
        let rg = self.grad_of(&[x, gamma, beta]);
        let op = Op::BatchNormEval { x, gamma, beta, mean: running_mean.to_vec(), inv_std };
        self.push(value, op, rg, "batch_norm")
    }

    fn check_channel_vec(&self, id: NodeId, ch: usize) -> Result<()> {
        if self.shape(id) != [ch] {
            return Err(Error::config(format!(
                "per-channel vector has shape {:?}, expected [{ch}]",
                self.shape(id)
            )));
        }
        Ok(())
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).map(|v| v.max(S::zero()));
        let rg = self.grad_of(&[x]);
        self.push(value, Op::Relu { x }, rg, "relu")
    }

    /// Inverted dropout: zeroes with probability `p`, scales survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
        }
        let keep = S::of(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<S> = (0..n)
            .map(|_| if p > 0.0 && rng.random::<f64>() < p { S::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.grad_of(&[x]);
        self.push(value, Op::Dropout { x, mask }, rg, "dropout")
    }

    /// Mean over the time axis: `[N, C, T] -> [N, C]`.
    pub fn mean_time(&mut self, x: NodeId) -> Result<NodeId> {
        let (batch, ch, len) = self.value(x).nct()?;
        let inv = S::of(1.0 / len as f64);
        let data = self
            .value(x)
            .data()
            .chunks(len)
            .map(|row| row.iter().fold(S::zero(), |a, &v| a + v) * inv)
            .collect();
        let value = Tensor::new(vec![batch, ch], data)?;
        let rg = self.grad_of(&[x]);
        self.push(value, Op::MeanTime { x }, rg, "mean_time")
    }

    /// `[N, C_in] x [C_out, C_in]^T + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let ([n, c_in], [c_out, wc_in]) = (&xs[..], &ws[..]) else {
            return Err(Error::config(format!("linear expects [N, C] x [O, C], got {xs:?}, {ws:?}")));
        };
        let (n, c_in, c_out) = (*n, *c_in, *c_out);
        if *wc_in != c_in {
            return Err(Error::config(format!("linear input has {c_in} features, weight expects {wc_in}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::config("linear bias does not match output width"));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![S::zero(); n * c_out];
        for r in 0..n {
            let row = &xd[r * c_in..][..c_in];
            for o in 0..c_out {
                let wr = &wd[o * c_in..][..c_in];
                let mut acc = b.map_or(S::zero(), |b| self.value(b).data()[o]);
                for (&a, &bw) in row.iter().zip(wr) {
                    acc = acc + a * bw;
                }
                out[r * c_out + o] = acc;
            }
        }
        let value = Tensor::new(vec![n, c_out], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.grad_of(&deps);
        self.push(value, Op::Linear { x, w, b }, rg, "linear")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::config(format!("mul shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.grad_of(&[a, b]);
        self.push(value, Op::Mul { a, b }, rg, "mul")
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().fold(S::zero(), |a, &v| a + v);
        let rg = self.grad_of(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg, "sum")
    }

    /// Batch-mean cross-entropy of `[N, C]` logits against soft `[N, C]`
    /// targets (rows of one-hot or mixed labels).
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &Tensor<S>) -> Result<NodeId> {
        let shape = self.shape(logits).to_vec();
        let [n, c] = shape[..] else {
            return Err(Error::config(format!("cross_entropy expects [N, C] logits, got {shape:?}")));
        };
        if targets.shape() != shape.as_slice() {
            return Err(Error::config(format!(
                "targets shape {:?} does not match logits {shape:?}",
                targets.shape()
            )));
        }
        let ld = self.value(logits).data();
        let logp = kernels::log_softmax_rows(ld, c);
        let probs = kernels::softmax_rows(ld, c);
        let total = logp.iter().zip(targets.data()).fold(S::zero(), |a, (&lp, &y)| {
            if y == S::zero() {
                a
            } else {
                a - y * lp
            }
        });
        let loss = total / S::of(n as f64);
        let rg = self.grad_of(&[logits]);
        let op = Op::CrossEntropy { logits, probs, targets: targets.data().to_vec() };
        self.push(Tensor::scalar(loss), op, rg, "cross_entropy")
    }

    /// Propagates `d loss / d node` for every node that requires a gradient.
    ///
    /// A tape can be differentiated once.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<S>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::usage("backward needs a scalar loss"));
        }
        self.backward_with_seed(loss, Tensor::scalar(S::one()))
    }

    /// Like [`Tape::backward`] but starts from an arbitrary cotangent for `root`.
    pub fn backward_with_seed(&mut self, root: NodeId, seed: Tensor<S>) -> Result<Gradients<S>> {
        if self.consumed {
            return Err(Error::usage("backward already called on this tape"));
        }
        if seed.shape() != self.shape(root) {
            return Err(Error::usage("seed shape does not match root"));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    scope: self.scopes[self.nodes[i].scope].clone(),
                    detail: "gradient".into(),
                });
            }
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self
            .params
            .iter()
            .map(|&(pid, node)| {
                let g = grads[node.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[node.0].value.shape()));
                (pid, g)
            })
            .collect();
        Ok(Gradients { params, nodes: grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, dims } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let mut gx = self.wants(*x).then(|| vec![S::zero(); xv.len()]);
                let mut gw = self.wants(*w).then(|| vec![S::zero(); wv.len()]);
                kernels::conv1d_backward(xv.data(), wv.data(), gd, *dims, gx.as_deref_mut(), gw.as_deref_mut());
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::SliceChannels { x, start } => {
                if self.wants(*x) {
                    let (batch, ch, len) = self.value(*x).nct()?;
                    let count = node.value.shape()[1];
                    let mut gx = vec![S::zero(); batch * ch * len];
                    for b in 0..batch {
                        gx[(b * ch + start) * len..(b * ch + start + count) * len]
                            .copy_from_slice(&gd[b * count * len..(b + 1) * count * len]);
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Concat { parts } => {
                let (batch, total, len) = node.value.nct()?;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(batch * c * len);
                        for b in 0..batch {
                            gp.extend_from_slice(&gd[(b * total + offset) * len..(b * total + offset + c) * len]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += c;
                }
            }
            Op::Add { parts } => {
                for &p in parts {
                    if self.wants(p) {
                        self.accumulate(grads, p, gd.to_vec());
                    }
                }
            }
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
                let (batch, ch, len) = node.value.nct()?;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![S::zero(); ch];
                let mut dbeta = vec![S::zero(); ch];
                for b in 0..batch {
                    for c in 0..ch {
                        let base = (b * ch + c) * len;
                        for j in base..base + len {
                            dgamma[c] = dgamma[c] + gd[j] * xhat[j];
                            dbeta[c] = dbeta[c] + gd[j];
                        }
                    }
                }
                if self.wants(*x) {
                    let m = S::of((batch * len) as f64);
                    let mut gx = vec![S::zero(); gd.len()];
                    for b in 0..batch {
                        for c in 0..ch {
                            let k = gm[c] * inv_std[c] / m;
                            let base = (b * ch + c) * len;
                            for j in base..base + len {
                                gx[j] = k * (m * gd[j] - dbeta[c] - xhat[j] * dgamma[c]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*gamma) {
                    self.accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    self.accumulate(grads, *beta, dbeta);
                }
            }
            Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
                let (batch, ch, len) = node.value.nct()?;
                let xs = self.value(*x).data();
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![S::zero(); ch];
                let mut dbeta = vec![S::zero(); ch];
                let mut gx = vec![S::zero(); gd.len()];
                for b in 0..batch {
                    for c in 0..ch {
                        let base = (b * ch + c) * len;
                        for j in base..base + len {
                            dgamma[c] = dgamma[c] + gd[j] * (xs[j] - mean[c]) * inv_std[c];
                            dbeta[c] = dbeta[c] + gd[j];
                            gx[j] = gd[j] * gm[c] * inv_std[c];
                        }
                    }
                }
                if self.wants(*x) {
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*gamma) {
                    self.accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    self.accumulate(grads, *beta, dbeta);
                }
            }
            Op::Relu { x } => {
                if self.wants(*x) {
                    let out = node.value.data();
                    let gx = gd
                        .iter()
                        .zip(out)
                        .map(|(&gv, &o)| if o > S::zero() { gv } else { S::zero() })
                        .collect();
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Dropout { x, mask } => {
                if self.wants(*x) {
                    let gx = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::MeanTime { x } => {
                if self.wants(*x) {
                    let len = self.shape(*x)[2];
                    let inv = S::of(1.0 / len as f64);
                    let mut gx = Vec::with_capacity(gd.len() * len);
                    for &gv in gd {
                        gx.extend(std::iter::repeat_n(gv * inv, len));
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x);
                let (n, c_in) = (xs.shape()[0], xs.shape()[1]);
                let c_out = node.value.shape()[1];
                let xd = xs.data();
                let wd = self.value(*w).data();
                if self.wants(*x) {
                    let mut gx = vec![S::zero(); n * c_in];
                    for r in 0..n {
                        for o in 0..c_out {
                            let gv = gd[r * c_out + o];
                            for (dst, &wv) in gx[r * c_in..][..c_in].iter_mut().zip(&wd[o * c_in..][..c_in]) {
                                *dst = *dst + gv * wv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![S::zero(); c_out * c_in];
                    for r in 0..n {
                        for o in 0..c_out {
                            let gv = gd[r * c_out + o];
                            for (dst, &xv) in gw[o * c_in..][..c_in].iter_mut().zip(&xd[r * c_in..][..c_in]) {
                                *dst = *dst + gv * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![S::zero(); c_out];
                        for row in gd.chunks(c_out) {
                            for (dst, &gv) in gb.iter_mut().zip(row) {
                                *dst = *dst + gv;
                            }
                        }
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    let ga = gd.iter().zip(self.value(*b).data()).map(|(&g, &v)| g * v).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = gd.iter().zip(self.value(*a).data()).map(|(&g, &v)| g * v).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    let n = self.value(*x).len();
                    self.accumulate(grads, *x, vec![gd[0]; n]);
                }
            }
            Op::CrossEntropy { logits, probs, targets } => {
                if self.wants(*logits) {
                    let n = self.shape(*logits)[0];
                    let k = gd[0] / S::of(n as f64);
                    let gl = probs.iter().zip(targets).map(|(&p, &y)| (p - y) * k).collect();
                    self.accumulate(grads, *logits, gl);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], id: NodeId, g: Vec<S>) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot @ None => {
                let shape = self.nodes[id.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, g).expect("gradient shape matches value"));
            }
        }
    }
}
