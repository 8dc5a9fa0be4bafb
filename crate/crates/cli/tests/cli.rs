use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use td3net::training::Dataset;
use td3net::features;

fn td3net(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_td3net")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_MODEL: &str = "b = 1\nn = 1\nl = 2\nk = 4\nin_channels = 6\nnum_classes = 2\ndropout = 0.0\n";

/// Two random samples with labels 0 and 1.
fn pair(dir: &Path, name: &str, channels: usize) -> PathBuf {
    let data: Vec<f32> = (0..2 * channels * 29).map(|i| ((i * 7919) % 101) as f32 / 50.0 - 1.0).collect();
    let ds = Dataset::new(channels, 29, 2, data, vec![0, 1]).unwrap();
    let p = dir.join(name);
    features::save(&ds, &p).unwrap();
    p
}

fn memorize(dir: &Path) -> PathBuf {
    let model = write(dir, "model.toml", SMALL_MODEL);
    pair(dir, "pair.bin", 6);
    let train = write(
        dir,
        "train.toml",
        "epochs = 150\nbatch_size = 2\nlr_init = 1e-2\nlr_final = 1e-5\nmixup_alpha = 0.0\nweight_decay = 0.0\n\
         [dataset]\nkind = \"files\"\ntrain = \"pair.bin\"\nval = \"pair.bin\"\n",
    );
    let out = dir.join("run");
    let o = td3net(&["train", "--model-config", s(&model), "--train-config", s(&train), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn missing_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.toml", "b = 1\nn = 1\nl = 2\n");
    let train = write(dir.path(), "train.toml", "epochs = 1\n");
    let o = td3net(&["train", "--model-config", s(&model), "--train-config", s(&train), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`k`"), "{}", stderr(&o));
    let o = td3net(&["count", "--model-config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    let bad = write(dir.path(), "bad.toml", "epochs = 1\nbatch_size = 0\n");
    let full = write(dir.path(), "full.toml", SMALL_MODEL);
    let o = td3net(&["train", "--model-config", s(&full), "--train-config", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_size"));
}

#[test]
fn training_artifacts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.toml", "b = 1\nn = 1\nl = 2\nk = 4\nin_channels = 16\nnum_classes = 10\n");
    let train = write(
        dir.path(),
        "train.toml",
        "epochs = 2\nbatch_size = 16\nlr_init = 3e-3\nlr_final = 3e-6\n\
         [dataset]\nkind = \"synthetic\"\ntrain_size = 40\nval_size = 20\n",
    );
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = td3net(&["train", "--model-config", s(&model), "--train-config", s(&train), "--out", s(&out), "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["best.ckpt", "final.ckpt", "log.csv", "resolved-config.toml"]);
        logs.push(fs::read(out.join("log.csv")).unwrap());
        let resolved = fs::read_to_string(out.join("resolved-config.toml")).unwrap();
        assert!(resolved.contains("seed = 3"));
    }
    assert_eq!(logs[0], logs[1]);
    let text = String::from_utf8(logs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("epoch,lr,train_loss,train_acc,val_loss,val_acc\n"));
}

#[test]
fn blind_spot_reports() {
    let dir = tempfile::tempdir().unwrap();
    let base = write(dir.path(), "base.toml", "b = 4\nn = 10\nl = 5\nk = 36\nc = 0.5\nt = 0.5\nbc = 144\n");
    let o = td3net(&["analyze", "--model-config", s(&base), "--mode", "blindspots"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "layer,t,rf_min,rf_max,rf_size,blind_spots\n");
    let standard = write(dir.path(), "std.toml", "b = 1\nn = 1\nl = 5\nk = 4\nvariant = \"standard_dilation\"\n");
    let out = dir.path().join("gaps.csv");
    let o = td3net(&["analyze", "--model-config", s(&standard), "--mode", "blindspots", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(fs::read_to_string(&out).unwrap().lines().count() > 1);
}

#[test]
fn field_of_the_first_layer() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.toml", "b = 1\nn = 1\nl = 1\nk = 1\nc = 1.0\nt = 1.0\n");
    let o = td3net(&["analyze", "--model-config", s(&model), "--mode", "rf", "--layer", "td3.0/td2.0/md.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 30);
    assert_eq!(lines[0], "layer,t,rf_min,rf_max,rf_size,contiguous");
    assert_eq!(lines[1], "td3.0/td2.0/md.0,0,0,1,2,true");
    assert_eq!(lines[15], "td3.0/td2.0/md.0,14,13,15,3,true");
    let o = td3net(&["analyze", "--model-config", s(&model), "--mode", "rf", "--layer", "td3.9/nothing"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("td3.9/nothing"));
}

#[test]
fn counting() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write(dir.path(), "toy.toml", "b = 1\nn = 1\nl = 1\nk = 1\nc = 1.0\nt = 1.0\n");
    let o = td3net(&["count", "--model-config", s(&toy), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let c = 512u64;
    let weights = c * 4 + 12 + 5 + (c + 1) * (c + 1);
    let bn = 2 * (4 + 1 + 1 + c + 1);
    let backend = text.lines().find(|l| l.starts_with("total_backend,")).unwrap();
    let f: Vec<&str> = backend.split(',').collect();
    assert_eq!(f[3].parse::<u64>().unwrap(), weights + bn);
    assert_eq!(f[5].parse::<u64>().unwrap(), 2 * 29 * weights);
    let total = text.lines().find(|l| l.starts_with("total_with_classifier,")).unwrap();
    assert_eq!(total.split(',').nth(3).unwrap().parse::<u64>().unwrap(), weights + bn + (c + 1) * 500 + 500);
    let o = td3net(&["count", "--model-config", s(&toy), "--flops-input", "8x10"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("8 channels x 10 frames"));
    for bad in ["512", "ax29", "0x29", "512x"] {
        let o = td3net(&["count", "--model-config", s(&toy), "--flops-input", bad]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn memorized_pair_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let run = memorize(dir.path());
    let ckpt = run.join("final.ckpt");
    let confusion = dir.path().join("confusion.csv");
    let o = td3net(&["eval", "--ckpt", s(&ckpt), "--features", s(&dir.path().join("pair.bin")), "--confusion", s(&confusion)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy 1.000000"), "{}", stdout(&o));
    assert!(fs::read_to_string(&confusion).unwrap().lines().count() >= 3);

    let data: Vec<f32> = (0..5 * 6 * 29).map(|i| (i % 13) as f32 / 13.0).collect();
    let five = Dataset::new(6, 29, 2, data, vec![0, 1, 0, 1, 0]).unwrap();
    let csv = dir.path().join("five.csv");
    features::save(&five, &csv).unwrap();
    let amap = dir.path().join("amap.csv");
    let o = td3net(&["amap", "--ckpt", s(&ckpt), "--features", s(&csv), "--out", s(&amap)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&amap).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l.split(',').count() == 30));

    let wide = pair(dir.path(), "wide.bin", 7);
    let o = td3net(&["eval", "--ckpt", s(&ckpt), "--features", s(&wide)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("7x29") && err.contains("6x29"), "{err}");

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    let broken = dir.path().join("broken.ckpt");
    fs::write(&broken, bytes).unwrap();
    let o = td3net(&["eval", "--ckpt", s(&broken), "--features", s(&dir.path().join("pair.bin"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("CRC"), "{}", stderr(&o));
}

#[test]
fn synthetic_split_export() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.toml", "[dataset]\nkind = \"synthetic\"\ntrain_size = 12\nval_size = 4\n");
    let out = dir.path().join("val.csv");
    let o = td3net(&["synth", "--train-config", s(&train), "--split", "val", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ds: Dataset<f32> = features::load(&out).unwrap();
    assert_eq!((ds.len(), ds.channels, ds.seq_len), (4, 16, 29));
    let files = write(dir.path(), "files.toml", "[dataset]\nkind = \"files\"\ntrain = \"a\"\nval = \"b\"\n");
    let o = td3net(&["synth", "--train-config", s(&files), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
