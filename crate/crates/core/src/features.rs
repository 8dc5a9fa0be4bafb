//! Feature files: labelled `[C, T]` sequences as CSV or as a binary
//! container.
//!
//! CSV files have a header `label,c0_t0,c0_t1,...,c{C-1}_t{T-1}` (channel
//! major) and one sample per row. Binary files hold a `features` tensor of
//! shape `[N, C, T]` and a `labels` tensor of shape `[N]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::Dataset;

fn column_name(ch: usize, t: usize) -> String {
    format!("c{ch}_t{t}")
}

fn parse_column(name: &str) -> Option<(usize, usize)> {
    let (c, t) = name.strip_prefix('c')?.split_once("_t")?;
    Some((c.parse().ok()?, t.parse().ok()?))
}

pub fn to_csv<S: Scalar>(ds: &Dataset<S>) -> String {
    let mut s = String::from("label");
    for ch in 0..ds.channels {
        for t in 0..ds.seq_len {
            write!(s, ",{}", column_name(ch, t)).unwrap();
        }
    }
    s.push('\n');
    for i in 0..ds.len() {
        write!(s, "{}", ds.labels()[i]).unwrap();
        for v in ds.sample(i) {
            write!(s, ",{}", v.as_f64()).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Parses CSV features. Labels must be below `num_classes` when given;
/// otherwise the class count is one more than the largest label.
pub fn from_csv<S: Scalar>(text: &str, num_classes: Option<usize>) -> Result<Dataset<S>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::Parse("feature CSV must start with a `label` column followed by values".into()));
    }
    let last = header.get(header.len() - 1).and_then(parse_column);
    let (channels, seq_len) = last
        .map(|(c, t)| (c + 1, t + 1))
        .ok_or_else(|| Error::Parse("cannot read channels and T from the header".into()))?;
    for (k, name) in header.iter().skip(1).enumerate() {
        if parse_column(name) != Some((k / seq_len, k % seq_len)) || channels * seq_len != header.len() - 1 {
            return Err(Error::Parse(format!("unexpected column `{name}` at position {}", k + 1)));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
        let label = rec[0].parse::<usize>().map_err(|_| Error::Parse(format!("row {}: bad label `{}`", row + 1, &rec[0])))?;
        labels.push(label);
        for v in rec.iter().skip(1) {
            let x: f64 = v.parse().map_err(|_| Error::Parse(format!("row {}: bad value `{v}`", row + 1)))?;
            data.push(S::of(x));
        }
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    Dataset::new(channels, seq_len, classes, data, labels)
}

pub fn to_container<S: Scalar>(ds: &Dataset<S>) -> Container {
    let mut c = Container::new(format!("kind = \"features\"\nnum_classes = {}\n", ds.num_classes));
    let (x, y) = ds.batch(&(0..ds.len()).collect::<Vec<_>>());
    let x = x.reshape(vec![ds.len(), ds.channels, ds.seq_len]).expect("batch shape");
    c.push("features", &x);
    let labels: Vec<f64> = y.iter().map(|&l| l as f64).collect();
    c.push("labels", &Tensor::<f64>::new(vec![labels.len()], labels).expect("rank 1"));
    c
}

pub fn from_container<S: Scalar>(c: &Container) -> Result<Dataset<S>> {
    let x: Tensor<S> = c.require("features")?.to_tensor();
    let y: Tensor<f64> = c.require("labels")?.to_tensor();
    let &[n, channels, seq_len] = x.shape() else {
        return Err(Error::Corrupt(format!("features must be [N, C, T], got {:?}", x.shape())));
    };
    if y.shape() != [n] {
        return Err(Error::Corrupt(format!("labels shape {:?} does not match {n} samples", y.shape())));
    }
    let labels = y
        .data()
        .iter()
        .map(|&l| if l >= 0.0 && l.fract() == 0.0 { Ok(l as usize) } else { Err(Error::Corrupt(format!("bad label {l}"))) })
        .collect::<Result<Vec<_>>>()?;
    let meta: toml::Table = c.config.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let classes = match meta.get("num_classes").and_then(|v| v.as_integer()) {
        Some(k) if k > 0 => k as usize,
        _ => labels.iter().max().map_or(1, |m| m + 1),
    };
    Dataset::new(channels, seq_len, classes, x.into_data(), labels)
}

/// Reads a feature file, choosing the format from its leading bytes.
pub fn load<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(crate::checkpoint::MAGIC) {
        from_container(&Container::from_bytes(&bytes)?)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse(format!("{} is neither CSV nor binary", path.display())))?;
        from_csv(&text, None)
    }
}

/// Writes CSV when the extension is `.csv` and the binary container otherwise.
pub fn save<S: Scalar>(ds: &Dataset<S>, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        std::fs::write(path, to_csv(ds))?;
        Ok(())
    } else {
        to_container(ds).save(path)
    }
}
