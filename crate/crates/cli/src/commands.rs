use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use td3net::analysis::{activation_map, amap_csv, blind_spot_csv, cost_report, rf_csv, ReceptiveFields};
use td3net::checkpoint::Container;
use td3net::training::{self, evaluate, load_network, log_csv, Dataset, DatasetSpec, SyntheticTask, TrainConfig};
use td3net::{features, Error, ModelConfig, Network};

use crate::{AnalyzeMode, CountFormat, Split};

/// 2 for usage and configuration problems, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Usage(_) | Error::Parse(_)) => 2,
        _ => 1,
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())).into())
}

fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = read_config(path)?;
    ModelConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
}

fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = read_config(path)?;
    TrainConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
}

fn write_output(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(body.as_bytes()).context("writing stdout"),
    }
}

/// Training and validation sets named by a training config. Relative
/// file paths resolve against the config's directory.
fn datasets(cfg: &TrainConfig, base: &Path) -> Result<(Dataset<f32>, Dataset<f32>)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(spec) => {
            let task = SyntheticTask::new(spec.clone())?;
            Ok((task.train_set(), task.val_set()))
        }
        DatasetSpec::Files { train, val } => {
            let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
            let (tp, vp) = (resolve(train), resolve(val));
            let tr = features::load(&tp).with_context(|| format!("reading {}", tp.display()))?;
            let va = features::load(&vp).with_context(|| format!("reading {}", vp.display()))?;
            Ok((tr, va))
        }
    }
}

pub fn train(model_path: &Path, train_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut model = load_model_config(model_path)?;
    let mut cfg = load_train_config(train_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = cfg.dropout_p {
        model.dropout = p;
    }
    model.seed = cfg.seed;
    let base = train_path.parent().unwrap_or(Path::new("."));
    let (tr, va) = datasets(&cfg, base)?;
    let run = training::train(&model, &cfg, &tr, &va, |r| {
        eprintln!(
            "epoch {:>3}  lr {:.3e}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}  ({:.1}s)",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_secs
        )
    })?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("log.csv"), log_csv(&run.log))?;
    run.best.save(&out.join("best.ckpt"))?;
    run.last.save(&out.join("final.ckpt"))?;
    let resolved = format!("[model]\n{}\n[train]\n{}", model.to_toml(), cfg.to_toml());
    fs::write(out.join("resolved-config.toml"), resolved)?;
    Ok(())
}

pub fn analyze(
    model_path: &Path,
    mode: AnalyzeMode,
    layer: Option<&str>,
    seq_len: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let model = load_model_config(model_path)?;
    let net: Network<f64> = Network::build(&model, model.seed)?;
    let graph = net.graph();
    if let Some(l) = layer {
        if graph.index_of(l).is_none() {
            return Err(Error::Usage(format!("unknown layer path `{l}`")).into());
        }
    }
    let rf = ReceptiveFields::compute(&graph, seq_len.unwrap_or(model.seq_len))?;
    let entries: Vec<_> = rf.all_entries().into_iter().filter(|e| layer.is_none_or(|l| e.path == l)).collect();
    let body = match mode {
        AnalyzeMode::Rf => rf_csv(&entries),
        AnalyzeMode::Blindspots => {
            let gaps: Vec<_> = entries.into_iter().filter(|e| !e.blind_spots.is_empty()).collect();
            blind_spot_csv(&gaps)
        }
    };
    write_output(out, &body)
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("malformed --flops-input `{s}`; expected CHANNELSxFRAMES such as 512x29"));
    let (c, t) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    let t: usize = t.trim().parse().map_err(|_| bad())?;
    if c == 0 || t == 0 {
        return Err(bad().into());
    }
    Ok((c, t))
}

pub fn count(model_path: &Path, flops_input: &str, format: CountFormat) -> Result<()> {
    let (channels, frames) = parse_shape(flops_input)?;
    let mut model = load_model_config(model_path)?;
    model.in_channels = channels;
    let net: Network<f32> = Network::build(&model, model.seed)?;
    let report = cost_report(&net, frames);
    let body = match format {
        CountFormat::Table => report.to_table(),
        CountFormat::Csv => report.to_csv(),
    };
    write_output(None, &body)
}

fn load_checkpoint(path: &Path) -> Result<Network<f64>> {
    let c = Container::load(path).with_context(|| format!("loading {}", path.display()))?;
    let (net, _) = load_network(&c).with_context(|| format!("loading {}", path.display()))?;
    Ok(net)
}

fn load_features(path: &Path, net: &Network<f64>) -> Result<Dataset<f64>> {
    let ds: Dataset<f64> = features::load(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = &net.config;
    if ds.channels != cfg.in_channels || ds.seq_len != cfg.seq_len {
        return Err(Error::Config(format!(
            "features are {}x{} (channels x T) but the checkpoint expects {}x{}",
            ds.channels, ds.seq_len, cfg.in_channels, cfg.seq_len
        ))
        .into());
    }
    Ok(ds)
}

pub fn amap(ckpt: &Path, features_path: &Path, out: &Path) -> Result<()> {
    let net = load_checkpoint(ckpt)?;
    let ds = load_features(features_path, &net)?;
    let mut rows = Vec::with_capacity(ds.len());
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(64) {
        let (x, _) = ds.batch(chunk);
        rows.extend(activation_map(&net, &x)?);
    }
    write_output(Some(out), &amap_csv(&rows))
}

pub fn eval(ckpt: &Path, features_path: &Path, confusion: Option<&Path>) -> Result<()> {
    let net = load_checkpoint(ckpt)?;
    let ds = load_features(features_path, &net)?;
    let ev = evaluate(&net, &ds, 64)?;
    println!("samples {}", ds.len());
    println!("accuracy {:.6}", ev.accuracy);
    println!("loss {:.6}", ev.loss);
    if let Some(p) = confusion {
        write_output(Some(p), &ev.confusion_csv())?;
    }
    Ok(())
}

pub fn synth(train_path: &Path, split: Split, out: &Path) -> Result<()> {
    let cfg = load_train_config(train_path)?;
    let DatasetSpec::Synthetic(spec) = &cfg.dataset else {
        return Err(Error::Usage("the training config does not describe a synthetic dataset".into()).into());
    };
    let task = SyntheticTask::new(spec.clone())?;
    let ds: Dataset<f32> = match split {
        Split::Train => task.train_set(),
        Split::Val => task.val_set(),
    };
    features::save(&ds, out).with_context(|| format!("writing {}", out.display()))
}
