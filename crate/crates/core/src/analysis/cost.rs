//! Analytic parameter and FLOP accounting.
//!
//! Convolutions cost `2 * T * K * C_in * C_out` FLOPs (one multiply-accumulate
//! counts as two); the classifier costs `2 * C_in * C_out`. Batch norm,
//! ReLU, branch summation and pooling are tallied separately as pointwise
//! work and left out of the headline figure.

use std::fmt::Write as _;

use crate::model::{Layer, Network};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Backend,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub path: String,
    pub kind: &'static str,
    pub section: Section,
    /// Trainable scalars: conv/linear weights, biases, BN gamma and beta.
    pub params: u64,
    /// Non-trainable running statistics.
    pub buffers: u64,
    /// Convolution / linear FLOPs.
    pub flops: u64,
    pub pointwise_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub seq_len: usize,
    pub in_channels: usize,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    fn sum(&self, section: Option<Section>, f: impl Fn(&CostRow) -> u64) -> u64 {
        self.rows.iter().filter(|r| section.is_none_or(|s| r.section == s)).map(f).sum()
    }

    pub fn backend_params(&self) -> u64 {
        self.sum(Some(Section::Backend), |r| r.params)
    }

    pub fn total_params(&self) -> u64 {
        self.sum(None, |r| r.params)
    }

    pub fn backend_flops(&self) -> u64 {
        self.sum(Some(Section::Backend), |r| r.flops)
    }

    pub fn total_flops(&self) -> u64 {
        self.sum(None, |r| r.flops)
    }

    pub fn pointwise_flops(&self) -> u64 {
        self.sum(None, |r| r.pointwise_flops)
    }

    pub fn buffers(&self) -> u64 {
        self.sum(None, |r| r.buffers)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,kind,section,params,buffers,flops,pointwise_flops\n");
        for r in &self.rows {
            let section = match r.section {
                Section::Backend => "backend",
                Section::Classifier => "classifier",
            };
            writeln!(s, "{},{},{},{},{},{},{}", r.path, r.kind, section, r.params, r.buffers, r.flops, r.pointwise_flops)
                .unwrap();
        }
        for (name, p, f) in [
            ("total_backend", self.backend_params(), self.backend_flops()),
            ("total_with_classifier", self.total_params(), self.total_flops()),
        ] {
            writeln!(s, "{name},total,all,{p},{},{f},{}", self.buffers(), self.pointwise_flops()).unwrap();
        }
        s
    }

    /// Summary table in millions of parameters and GFLOPs.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "input: {} channels x {} frames", self.in_channels, self.seq_len).unwrap();
        writeln!(s, "{:<24} {:>14} {:>14}", "", "params (M)", "GFLOPs").unwrap();
        writeln!(
            s,
            "{:<24} {:>14.4} {:>14.4}",
            "backend",
            self.backend_params() as f64 / 1e6,
            self.backend_flops() as f64 / 1e9
        )
        .unwrap();
        writeln!(
            s,
            "{:<24} {:>14.4} {:>14.4}",
            "with classifier",
            self.total_params() as f64 / 1e6,
            self.total_flops() as f64 / 1e9
        )
        .unwrap();
        writeln!(s, "{:<24} {:>14} {:>14.4}", "pointwise (excluded)", "", self.pointwise_flops() as f64 / 1e9).unwrap();
        writeln!(s, "{:<24} {:>14.4}", "BN buffers (M)", self.buffers() as f64 / 1e6).unwrap();
        s
    }
}

fn conv_cost(c_in: usize, c_out: usize, kernel: usize, len: usize) -> (u64, u64) {
    let w = (c_in * c_out * kernel) as u64;
    (w, 2 * len as u64 * w)
}

/// Pointwise cost of BN (scale and shift) plus ReLU on a `ch x len` map.
fn bn_relu_pointwise(ch: usize, len: usize) -> u64 {
    3 * (ch * len) as u64
}

/// Per-layer costs for an input of `in_channels x seq_len`, computed from
/// layer shapes alone.
pub fn cost_report<S: Scalar>(net: &Network<S>, seq_len: usize) -> CostReport {
    let mut rows = Vec::with_capacity(net.nodes().len() + 1);
    for node in net.nodes() {
        let row = match &node.layer {
            Layer::Tc(l) => {
                let (w, f) = conv_cost(l.c_in, l.c_out, l.kernel, seq_len);
                CostRow {
                    path: l.path.clone(),
                    kind: "tc",
                    section: Section::Backend,
                    params: w + 2 * l.c_out as u64,
                    buffers: 2 * l.c_out as u64,
                    flops: f,
                    pointwise_flops: bn_relu_pointwise(l.c_out, seq_len),
                }
            }
            Layer::Bottleneck(l) => {
                let (w, f) = conv_cost(l.c_in, l.c_out, 1, seq_len);
                CostRow {
                    path: l.path.clone(),
                    kind: "bottleneck",
                    section: Section::Backend,
                    params: w + 2 * l.c_out as u64,
                    buffers: 2 * l.c_out as u64,
                    flops: f,
                    pointwise_flops: bn_relu_pointwise(l.c_out, seq_len),
                }
            }
            Layer::MultiDilated(l) => {
                let mut params = 0;
                let mut flops = 0;
                let mut norms = 0u64;
                for s in &l.subs {
                    let (w, f) = conv_cost(s.c_in, l.growth, l.kernel, seq_len);
                    params += w;
                    flops += f;
                    norms += s.norm.is_some() as u64;
                }
                norms += l.norm.is_some() as u64;
                let k = l.growth as u64;
                let sum_cost = (l.subs.len() as u64 - 1) * k * seq_len as u64;
                CostRow {
                    path: l.path.clone(),
                    kind: "multi_dilated",
                    section: Section::Backend,
                    params: params + norms * 2 * k,
                    buffers: norms * 2 * k,
                    flops,
                    pointwise_flops: sum_cost + norms * bn_relu_pointwise(l.growth, seq_len),
                }
            }
        };
        rows.push(row);
    }
    let head = net.head();
    let (c_in, classes) = (head.c_in as u64, head.classes as u64);
    rows.push(CostRow {
        path: "head".into(),
        kind: "linear",
        section: Section::Classifier,
        params: c_in * classes + classes,
        buffers: 0,
        flops: 2 * c_in * classes,
        pointwise_flops: c_in * seq_len as u64 + classes,
    });
    CostReport { seq_len, in_channels: net.config.in_channels, rows }
}
