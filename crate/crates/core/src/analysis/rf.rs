//! Symbolic receptive-field propagation and blind-spot detection.
//!
//! Sets are pushed through the architecture graph without running the
//! network: a convolution with kernel `K` and dilation `d` at output index
//! `t` reads input indices `t + offset_j` for every tap `j` whose position
//! lies inside the sequence, and a node's set is the union over everything
//! it reads.

use super::bitset::IndexSet;
use crate::error::{Error, Result};
use crate::model::ArchGraph;

/// Inclusive run of missing indices `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Receptive field of one activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfEntry {
    pub path: String,
    pub time: usize,
    /// Sorted input time indices.
    pub indices: Vec<usize>,
    pub blind_spots: Vec<Interval>,
}

impl RfEntry {
    pub fn min(&self) -> usize {
        self.indices[0]
    }

    pub fn max(&self) -> usize {
        *self.indices.last().expect("receptive field is never empty")
    }

    pub fn is_contiguous(&self) -> bool {
        self.blind_spots.is_empty()
    }
}

/// Maximal runs of indices missing strictly between the smallest and
/// largest member of a sorted, duplicate-free set.
pub fn detect_blind_spots(indices: &[usize]) -> Result<Vec<Interval>> {
    if indices.is_empty() {
        return Err(Error::usage("blind-spot detection on an empty set"));
    }
    Ok(indices
        .windows(2)
        .filter(|w| w[1] > w[0] + 1)
        .map(|w| Interval { start: w[0] + 1, end: w[1] - 1 })
        .collect())
}

/// Receptive fields of every activation at every time index for a fixed
/// sequence length.
#[derive(Debug, Clone)]
pub struct ReceptiveFields {
    paths: Vec<String>,
    sets: Vec<Vec<IndexSet>>,
    seq_len: usize,
}

impl ReceptiveFields {
    pub fn compute(graph: &ArchGraph, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::usage("sequence length must be at least 1"));
        }
        let mut sets: Vec<Vec<IndexSet>> = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let per_t = if node.reads.is_empty() {
                (0..seq_len).map(|t| IndexSet::singleton(seq_len, t)).collect()
            } else {
                (0..seq_len)
                    .map(|t| {
                        let mut acc = IndexSet::empty(seq_len);
                        for read in &node.reads {
                            for j in 0..read.kernel {
                                let pos = t as isize + graph.padding.tap_offset(j, read.kernel, read.dilation);
                                if pos < 0 || pos >= seq_len as isize {
                                    continue;
                                }
                                for &src in &read.sources {
                                    acc.union_with(&sets[src][pos as usize]);
                                }
                            }
                        }
                        acc
                    })
                    .collect()
            };
            sets.push(per_t);
        }
        Ok(ReceptiveFields { paths: graph.nodes.iter().map(|n| n.path.clone()).collect(), sets, seq_len })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn set(&self, node: usize, time: usize) -> &IndexSet {
        &self.sets[node][time]
    }

    fn node_index(&self, path: &str) -> Result<usize> {
        self.paths
            .iter()
            .position(|p| p == path)
            .ok_or_else(|| Error::usage(format!("unknown layer path `{path}`")))
    }

    pub fn entry(&self, path: &str, time: usize) -> Result<RfEntry> {
        let node = self.node_index(path)?;
        if time >= self.seq_len {
            return Err(Error::usage(format!("time index {time} outside 0..{}", self.seq_len)));
        }
        let indices = self.sets[node][time].to_vec();
        let blind_spots = detect_blind_spots(&indices)?;
        Ok(RfEntry { path: path.to_string(), time, indices, blind_spots })
    }

    /// Entries for every activation and time index, in graph order.
    pub fn all_entries(&self) -> Vec<RfEntry> {
        let mut out = Vec::with_capacity(self.paths.len() * self.seq_len);
        for (node, path) in self.paths.iter().enumerate() {
            for t in 0..self.seq_len {
                let indices = self.sets[node][t].to_vec();
                let blind_spots = detect_blind_spots(&indices).expect("non-empty");
                out.push(RfEntry { path: path.clone(), time: t, indices, blind_spots });
            }
        }
        out
    }

    /// Every activation whose receptive field has a gap.
    pub fn blind_spot_entries(&self) -> Vec<RfEntry> {
        self.all_entries().into_iter().filter(|e| !e.blind_spots.is_empty()).collect()
    }
}

/// Receptive field of a single activation.
pub fn receptive_field(graph: &ArchGraph, seq_len: usize, path: &str, time: usize) -> Result<RfEntry> {
    if graph.index_of(path).is_none() {
        return Err(Error::usage(format!("unknown layer path `{path}`")));
    }
    ReceptiveFields::compute(graph, seq_len)?.entry(path, time)
}
