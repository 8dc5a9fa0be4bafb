//! In-memory labelled sequence datasets and the synthetic multi-scale task.
//!
//! Every synthetic class combines three components:
//!
//! * a local motif spanning 3 frames,
//! * a medium motif spanning 9 frames,
//! * a global pair of identical pulses whose spacing (up to 24 frames) is
//!   class specific.
//!
//! Placements are random per sample, so the spacing of the global pair can
//! only be read by units whose receptive field covers both pulses.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{item_stream, stream, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Labelled `[C, T]` sequences stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub channels: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    data: Vec<S>,
    labels: Vec<usize>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(channels: usize, seq_len: usize, num_classes: usize, data: Vec<S>, labels: Vec<usize>) -> Result<Self> {
        if data.len() != labels.len() * channels * seq_len {
            return Err(Error::config(format!(
                "{} values cannot hold {} samples of {channels}x{seq_len}",
                data.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Dataset { channels, seq_len, num_classes, data, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[S] {
        let n = self.channels * self.seq_len;
        &self.data[i * n..(i + 1) * n]
    }

    /// Stacks the listed samples into `[B, C, T]`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.channels * self.seq_len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let x = Tensor::new(vec![indices.len(), self.channels, self.seq_len], data).expect("consistent batch shape");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let data = indices.iter().flat_map(|&i| self.sample(i).iter().copied()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset { channels: self.channels, seq_len: self.seq_len, num_classes: self.num_classes, data, labels }
    }
}

/// One-hot `[N, classes]` targets.
pub fn one_hot<S: Scalar>(labels: &[usize], classes: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = S::one();
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "defaults::num_classes")]
    pub num_classes: usize,
    #[serde(default = "defaults::channels")]
    pub channels: usize,
    #[serde(default = "defaults::seq_len")]
    pub seq_len: usize,
    #[serde(default = "defaults::train_size")]
    pub train_size: usize,
    #[serde(default = "defaults::val_size")]
    pub val_size: usize,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    /// Relative amplitude jitter applied to each component.
    #[serde(default = "defaults::jitter")]
    pub jitter: f64,
    /// Seed for the class prototypes and the samples.
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn num_classes() -> usize {
        10
    }
    pub fn channels() -> usize {
        16
    }
    pub fn seq_len() -> usize {
        29
    }
    pub fn train_size() -> usize {
        1000
    }
    pub fn val_size() -> usize {
        200
    }
    pub fn noise() -> f64 {
        0.3
    }
    pub fn jitter() -> f64 {
        0.2
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: defaults::num_classes(),
            channels: defaults::channels(),
            seq_len: defaults::seq_len(),
            train_size: defaults::train_size(),
            val_size: defaults::val_size(),
            noise: defaults::noise(),
            jitter: defaults::jitter(),
            seed: 0,
        }
    }
}

pub const LOCAL_SPAN: usize = 3;
pub const MEDIUM_SPAN: usize = 9;
const PULSE_SPAN: usize = 2;
const MIN_LAG: usize = 12;
/// Pulses are short, so they are drawn louder than the motifs.
const PULSE_GAIN: f64 = 4.0;
const MAX_LAG: usize = 24;

/// Component choice of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCode {
    pub local: usize,
    pub medium: usize,
    /// Distance between the two global pulses.
    pub lag: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: SyntheticSpec,
    local: Vec<Vec<f64>>,
    medium: Vec<Vec<f64>>,
    pulse: Vec<f64>,
    codes: Vec<ClassCode>,
}

fn template<R: Rng>(channels: usize, span: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..channels * span).map(|_| rng.sample(StandardNormal)).collect();
    let norm = (v.iter().map(|x| x * x).sum::<f64>() / span as f64).sqrt();
    for x in &mut v {
        *x *= 2.0 / norm;
    }
    v
}

impl SyntheticTask {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if spec.channels == 0 {
            return Err(Error::config("channels must be positive"));
        }
        if spec.seq_len < MAX_LAG + PULSE_SPAN + 1 {
            return Err(Error::config(format!("seq_len must be at least {}", MAX_LAG + PULSE_SPAN + 1)));
        }
        if !(spec.noise >= 0.0 && spec.jitter >= 0.0 && spec.jitter < 1.0) {
            return Err(Error::config("noise must be non-negative and jitter in [0, 1)"));
        }
        // Two local and two medium variants; the lag supplies the remaining factor.
        let n_lags = spec.num_classes.div_ceil(4);
        if n_lags > MAX_LAG - MIN_LAG + 1 {
            return Err(Error::config(format!("at most {} classes are supported", 4 * (MAX_LAG - MIN_LAG + 1))));
        }
        let lags: Vec<usize> = (0..n_lags)
            .map(|i| if n_lags == 1 { MAX_LAG } else { MIN_LAG + i * (MAX_LAG - MIN_LAG) / (n_lags - 1) })
            .collect();
        let codes = (0..spec.num_classes)
            .map(|c| ClassCode { local: c / (2 * n_lags), medium: (c / n_lags) % 2, lag: lags[c % n_lags] })
            .collect();
        let mut rng = stream(spec.seed, Stream::Data);
        let local = (0..2).map(|_| template(spec.channels, LOCAL_SPAN, &mut rng)).collect();
        let medium = (0..2).map(|_| template(spec.channels, MEDIUM_SPAN, &mut rng)).collect();
        let pulse = template(spec.channels, PULSE_SPAN, &mut rng).into_iter().map(|v| v * PULSE_GAIN).collect();
        Ok(SyntheticTask { spec, local, medium, pulse, codes })
    }

    pub fn code(&self, class: usize) -> ClassCode {
        self.codes[class]
    }

    pub fn label(&self, index: usize) -> usize {
        index % self.spec.num_classes
    }

    /// Sample `index` as `[C, T]` values. Indices below `train_size` form
    /// the training split; the next `val_size` form the validation split.
    pub fn generate(&self, index: usize) -> Vec<f64> {
        let (c, t) = (self.spec.channels, self.spec.seq_len);
        let mut rng = item_stream(self.spec.seed, Stream::Data, index as u64);
        let mut x: Vec<f64> = (0..c * t).map(|_| self.spec.noise * rng.sample::<f64, _>(StandardNormal)).collect();
        let code = self.codes[self.label(index)];
        let jitter = self.spec.jitter;
        let place = |x: &mut [f64], motif: &[f64], span: usize, start: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let a = 1.0 + rng.random_range(-jitter..=jitter);
            for ch in 0..c {
                for j in 0..span {
                    x[ch * t + start + j] += a * motif[ch * span + j];
                }
            }
        };
        let s = rng.random_range(0..=t - LOCAL_SPAN);
        place(&mut x, &self.local[code.local], LOCAL_SPAN, s, &mut rng);
        let s = rng.random_range(0..=t - MEDIUM_SPAN);
        place(&mut x, &self.medium[code.medium], MEDIUM_SPAN, s, &mut rng);
        let s = rng.random_range(0..=t - code.lag - PULSE_SPAN);
        place(&mut x, &self.pulse, PULSE_SPAN, s, &mut rng);
        place(&mut x, &self.pulse, PULSE_SPAN, s + code.lag, &mut rng);
        x
    }

    fn split<S: Scalar>(&self, start: usize, len: usize) -> Dataset<S> {
        let mut data = Vec::with_capacity(len * self.spec.channels * self.spec.seq_len);
        let mut labels = Vec::with_capacity(len);
        for i in start..start + len {
            data.extend(self.generate(i).into_iter().map(S::of));
            labels.push(self.label(i));
        }
        Dataset::new(self.spec.channels, self.spec.seq_len, self.spec.num_classes, data, labels).expect("generator shape")
    }

    pub fn train_set<S: Scalar>(&self) -> Dataset<S> {
        self.split(0, self.spec.train_size)
    }

    pub fn val_set<S: Scalar>(&self) -> Dataset<S> {
        self.split(self.spec.train_size, self.spec.val_size)
    }
}
