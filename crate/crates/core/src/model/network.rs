use rand::Rng;

use super::config::{cyclic_dilation, reduce, ModelConfig, Variant, BASELINE_DEPTHS};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::layers::{he_normal, Bottleneck, Ctx, Mode, MultiDilatedLayer, ParamStore, TcLayer};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::tape::{NodeId, ParamId, Tape};
use crate::tensor::Tensor;

/// Temporal kernel width of every TC and multi-dilated layer.
pub const KERNEL: usize = 3;

#[derive(Debug, Clone)]
pub enum Layer {
    Tc(TcLayer),
    Bottleneck(Bottleneck),
    MultiDilated(MultiDilatedLayer),
}

impl Layer {
    pub fn path(&self) -> &str {
        match self {
            Layer::Tc(l) => &l.path,
            Layer::Bottleneck(l) => &l.path,
            Layer::MultiDilated(l) => &l.path,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Layer::Tc(l) => l.c_out,
            Layer::Bottleneck(l) => l.c_out,
            Layer::MultiDilated(l) => l.growth,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Layer::Tc(l) => l.c_in,
            Layer::Bottleneck(l) => l.c_in,
            Layer::MultiDilated(l) => l.in_channels(),
        }
    }
}

/// A layer together with the features it reads. The inputs are
/// concatenated along channels in the listed order.
#[derive(Debug, Clone)]
pub struct LayerNode {
    pub layer: Layer,
    /// Feature indices: 0 is the network input, `i + 1` is the output of node `i`.
    pub inputs: Vec<usize>,
}

/// Temporal average pooling followed by a linear classifier.
#[derive(Debug, Clone)]
pub struct Head {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub classes: usize,
}

/// One receptive-field edge group: the node reads the concatenation of
/// `sources` through a `kernel`-wide filter at `dilation`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Read {
    pub sources: Vec<usize>,
    pub kernel: usize,
    pub dilation: usize,
}

/// Architecture-only view of a network activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchNode {
    pub path: String,
    pub channels: usize,
    /// Empty for the input. A node's value at time `t` depends on the
    /// union over all reads.
    pub reads: Vec<Read>,
}

/// Structural graph of every named activation, in topological order.
#[derive(Debug, Clone)]
pub struct ArchGraph {
    pub nodes: Vec<ArchNode>,
    pub padding: Padding,
}

impl ArchGraph {
    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.path == path)
    }
}

/// Output handles of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `[N, num_classes]`.
    pub logits: NodeId,
    /// Final backend feature map `[N, C, T]`, before pooling.
    pub backend: NodeId,
}

/// An instantiated backend plus classification head.
#[derive(Debug, Clone)]
pub struct Network<S> {
    pub config: ModelConfig,
    store: ParamStore<S>,
    nodes: Vec<LayerNode>,
    feature_channels: Vec<usize>,
    head: Head,
}

struct Builder<'a, S, R> {
    cfg: &'a ModelConfig,
    store: ParamStore<S>,
    nodes: Vec<LayerNode>,
    feature_channels: Vec<usize>,
    rng: &'a mut R,
}

impl<S: Scalar, R: Rng> Builder<'_, S, R> {
    fn width(&self, feats: &[usize]) -> usize {
        feats.iter().map(|&f| self.feature_channels[f]).sum()
    }

    fn push(&mut self, layer: Layer, inputs: Vec<usize>) -> usize {
        self.feature_channels.push(layer.out_channels());
        self.nodes.push(LayerNode { layer, inputs });
        self.feature_channels.len() - 1
    }

    fn bottleneck(&mut self, path: &str, inputs: Vec<usize>, c_out: usize) -> usize {
        let c_in = self.width(&inputs);
        let layer = Bottleneck::create(&mut self.store, path, c_in, c_out, self.rng);
        self.push(Layer::Bottleneck(layer), inputs)
    }

    /// Input bottleneck, `depth` multi-dilated layers densely stacked, output
    /// bottleneck. Returns the output feature.
    fn td2_block(&mut self, prefix: &str, inputs: Vec<usize>, depth: usize) -> Result<usize> {
        let cfg = self.cfg;
        let bc = cfg.bottleneck_width();
        let first = self.bottleneck(&format!("{prefix}/in"), inputs, bc);
        let mut stack = vec![first];
        for l in 0..depth {
            let widths: Vec<usize> = stack.iter().map(|&f| self.feature_channels[f]).collect();
            let dilations: Vec<usize> = (0..=l).map(|i| cfg.branch_dilation(l, i)).collect();
            let layer = MultiDilatedLayer::create(
                &mut self.store,
                &format!("{prefix}/md.{l}"),
                &widths,
                &dilations,
                cfg.k,
                KERNEL,
                cfg.dropout,
                cfg.branch_norm,
                self.rng,
            )?;
            let f = self.push(Layer::MultiDilated(layer), stack.clone());
            stack.push(f);
        }
        let out = reduce(depth * cfg.k, cfg.t, &format!("{prefix}/out"))?;
        Ok(self.bottleneck(&format!("{prefix}/out"), stack, out))
    }

    /// Like a TD2 block but each layer is one plain TC conv over the whole stack.
    fn dense_block(&mut self, prefix: &str, inputs: Vec<usize>, depth: usize) -> Result<usize> {
        let cfg = self.cfg;
        let first = self.bottleneck(&format!("{prefix}/in"), inputs, cfg.bottleneck_width());
        let mut stack = vec![first];
        for i in 0..depth {
            let c_in = self.width(&stack);
            let layer = TcLayer::create(
                &mut self.store,
                &format!("{prefix}/tc.{i}"),
                c_in,
                cfg.k,
                KERNEL,
                cyclic_dilation(i),
                cfg.dropout,
                self.rng,
            );
            let f = self.push(Layer::Tc(layer), stack.clone());
            stack.push(f);
        }
        let out = reduce(depth * cfg.k, cfg.t, &format!("{prefix}/out"))?;
        Ok(self.bottleneck(&format!("{prefix}/out"), stack, out))
    }

    fn td3_backend(&mut self) -> Result<usize> {
        let cfg = self.cfg;
        let mut x = 0;
        for b in 0..cfg.b {
            let mut stack = vec![x];
            for n in 0..cfg.n {
                let out = self.td2_block(&format!("td3.{b}/td2.{n}"), stack.clone(), cfg.l)?;
                stack.push(out);
            }
            let width = self.width(&stack);
            // The last block keeps its width but is still projected.
            let c_out = if b + 1 < cfg.b { reduce(width, cfg.c, &format!("td3.{b}/proj"))? } else { width };
            x = self.bottleneck(&format!("td3.{b}/proj"), stack, c_out);
        }
        Ok(x)
    }

    fn baseline_backend(&mut self, multi_dilated: bool) -> Result<usize> {
        let mut x = 0;
        for (b, &depth) in BASELINE_DEPTHS.iter().enumerate() {
            x = if multi_dilated {
                self.td2_block(&format!("td2.{b}"), vec![x], depth)?
            } else {
                self.dense_block(&format!("dense.{b}"), vec![x], depth)?
            };
        }
        Ok(x)
    }
}

impl<S: Scalar> Network<S> {
    /// Builds a network; a pure function of `(config, seed)`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut b = Builder {
            cfg: config,
            store: ParamStore::new(),
            nodes: Vec::new(),
            feature_channels: vec![config.in_channels],
            rng: &mut rng,
        };
        let last = match config.variant {
            Variant::Td3net | Variant::NoDilation | Variant::StandardDilation => b.td3_backend()?,
            Variant::Td2net => b.baseline_backend(true)?,
            Variant::DenseTcn => b.baseline_backend(false)?,
        };
        let c_in = b.feature_channels[last];
        let classes = config.num_classes;
        let weight = b.store.add("head.weight".into(), he_normal(&[classes, c_in], c_in, b.rng));
        let bias = b.store.add("head.bias".into(), Tensor::zeros(&[classes]));
        let Builder { store, nodes, feature_channels, .. } = b;
        Ok(Network {
            config: config.clone(),
            store,
            nodes,
            feature_channels,
            head: Head { weight, bias, c_in, classes },
        })
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    /// Channel width of feature `index` (0 = input).
    pub fn feature_channels(&self, index: usize) -> usize {
        self.feature_channels[index]
    }

    pub fn backend_channels(&self) -> usize {
        self.head.c_in
    }

    pub fn layer(&self, path: &str) -> Option<&Layer> {
        self.nodes.iter().map(|n| &n.layer).find(|l| l.path() == path)
    }

    /// Records the forward computation on `ctx.tape` for an `[N, C_in, T]` input.
    pub fn forward(&self, ctx: &mut Ctx<'_, S>, input: NodeId) -> Result<Outputs> {
        let shape = ctx.tape.shape(input).to_vec();
        if shape.len() != 3 || shape[1] != self.config.in_channels {
            return Err(Error::config(format!(
                "input shape {shape:?} does not match the network's [N, {}, T]",
                self.config.in_channels
            )));
        }
        ctx.record("input", input);
        let mut feats = Vec::with_capacity(self.nodes.len() + 1);
        feats.push(input);
        for node in &self.nodes {
            let parts: Vec<NodeId> = node.inputs.iter().map(|&i| feats[i]).collect();
            let x = if parts.len() == 1 { parts[0] } else { ctx.tape.concat_channels(&parts)? };
            let y = match &node.layer {
                Layer::Tc(l) => l.forward(ctx, x)?,
                Layer::Bottleneck(l) => l.forward(ctx, x)?,
                Layer::MultiDilated(l) => l.forward(ctx, x)?,
            };
            ctx.record(node.layer.path(), y);
            feats.push(y);
        }
        let backend = *feats.last().expect("input feature");
        ctx.tape.set_scope("head");
        let pooled = ctx.tape.mean_time(backend)?;
        let w = ctx.param(self.head.weight)?;
        let b = ctx.param(self.head.bias)?;
        let logits = ctx.tape.linear(pooled, w, Some(b))?;
        Ok(Outputs { logits, backend })
    }

    /// Eval-mode logits for an `[N, C_in, T]` batch.
    pub fn predict(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store, Mode::Eval, self.config.padding);
        let x = ctx.tape.constant(input.clone())?;
        let out = self.forward(&mut ctx, x)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode final backend feature map `[N, C, T]`.
    pub fn backend_features(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store, Mode::Eval, self.config.padding);
        let x = ctx.tape.constant(input.clone())?;
        let out = self.forward(&mut ctx, x)?;
        Ok(tape.value(out.backend).clone())
    }

    /// Names of every activation the forward pass records, in order.
    pub fn activation_paths(&self) -> Vec<String> {
        self.graph().nodes.into_iter().map(|n| n.path).collect()
    }

    /// Architecture graph used for receptive-field analysis, derived from
    /// layer metadata alone.
    pub fn graph(&self) -> ArchGraph {
        let mut nodes = vec![ArchNode { path: "input".into(), channels: self.config.in_channels, reads: vec![] }];
        // feature index -> graph node index
        let mut feat_node = vec![0usize];
        for node in &self.nodes {
            let sources: Vec<usize> = node.inputs.iter().map(|&f| feat_node[f]).collect();
            match &node.layer {
                Layer::Tc(l) => nodes.push(ArchNode {
                    path: l.path.clone(),
                    channels: l.c_out,
                    reads: vec![Read { sources, kernel: l.kernel, dilation: l.dilation }],
                }),
                Layer::Bottleneck(l) => nodes.push(ArchNode {
                    path: l.path.clone(),
                    channels: l.c_out,
                    reads: vec![Read { sources, kernel: 1, dilation: 1 }],
                }),
                Layer::MultiDilated(l) => {
                    let mut sub_nodes = Vec::with_capacity(l.subs.len());
                    for (s, &src) in l.subs.iter().zip(&sources) {
                        nodes.push(ArchNode {
                            path: s.path.clone(),
                            channels: l.growth,
                            reads: vec![Read { sources: vec![src], kernel: l.kernel, dilation: s.dilation }],
                        });
                        sub_nodes.push(nodes.len() - 1);
                    }
                    nodes.push(ArchNode {
                        path: l.path.clone(),
                        channels: l.growth,
                        reads: vec![Read { sources: sub_nodes, kernel: 1, dilation: 1 }],
                    });
                }
            }
            feat_node.push(nodes.len() - 1);
        }
        ArchGraph { nodes, padding: self.config.padding }
    }

    /// Copy whose every parameter is replaced by values of the same shape;
    /// `f` receives the parameter name and old value.
    pub fn map_params(&self, f: impl Fn(&str, S) -> S) -> Self {
        let mut out = self.clone();
        for p in out.store.params_mut() {
            let name = p.name.clone();
            for v in p.value.data_mut() {
                *v = f(&name, *v);
            }
        }
        out
    }
}
