mod common;

use common::{random, rng};
use proptest::prelude::*;
use td3net::checkpoint::Container;
use td3net::features;
use td3net::rng::{stream, Stream};
use td3net::training::*;
use td3net::{Error, ModelConfig, Network, Tensor};

fn small_model(in_channels: usize) -> ModelConfig {
    let mut m = ModelConfig::td3net(1, 1, 2, 4);
    m.in_channels = in_channels;
    m.num_classes = 3;
    m
}

fn small_data(n: usize, seed: u64) -> Dataset<f64> {
    let x = random(&[n, 4, 29], &mut rng(seed));
    Dataset::new(4, 29, 3, x.into_data(), (0..n).map(|i| i % 3).collect()).unwrap()
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, lr_init: 1e-2, lr_final: 1e-4, seed, ..TrainConfig::default() }
}

#[test]
fn mixup_lambda_mean() {
    let mut r = stream(7, Stream::Mixup);
    let n = 100_000;
    let mean = (0..n).map(|_| sample_lambda(0.4, &mut r).unwrap()).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
}

proptest! {
    #[test]
    fn mixed_targets_are_distributions(labels in prop::collection::vec(0usize..5, 1..12), seed in any::<u64>(), alpha in 0.0f64..2.0) {
        let y = one_hot::<f32>(&labels, 5);
        let x = Tensor::<f32>::zeros(&[labels.len(), 2, 3]);
        let (_, ym, lambda) = mixup(&x, &y, alpha, &mut stream(seed, Stream::Mixup)).unwrap();
        prop_assert!((0.0..=1.0).contains(&lambda));
        for row in ym.data().chunks(5) {
            prop_assert_eq!(row.iter().sum::<f32>(), 1.0);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn cosine_is_monotone(total in 1usize..500, a in 1e-6f64..1.0, ratio in 0.0f64..1.0) {
        let b = a * ratio;
        prop_assert_eq!(cosine_lr(0, total, a, b).unwrap(), a);
        prop_assert_eq!(cosine_lr(total, total, a, b).unwrap(), b);
        let mut prev = a;
        for s in 1..=total {
            let lr = cosine_lr(s, total, a, b).unwrap();
            prop_assert!(lr <= prev && lr >= b);
            prev = lr;
        }
    }
}

#[test]
fn cosine_rejects_bad_steps() {
    assert!(cosine_lr(0, 0, 1.0, 0.1).is_err());
    assert!(cosine_lr(11, 10, 1.0, 0.1).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let mut net = Network::<f64>::build(&small_model(4), 1).unwrap();
    let before = net.clone();
    let mut opt = AdamW::new(net.store(), 0.01);
    let grads: Vec<_> = net.store().params().iter().enumerate().map(|(i, p)| (td3net::ParamId(i), p.value.map(|_| 1.0))).collect();
    opt.step(net.store_mut(), &grads, 0.0).unwrap();
    for (a, b) in net.store().params().iter().zip(before.store().params()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn memorizes_two_samples() {
    let mut model = ModelConfig::tiny();
    model.num_classes = 2;
    let x = random(&[2, 512, 29], &mut rng(11)).cast::<f32>();
    let ds = Dataset::new(512, 29, 2, x.into_data(), vec![0, 1]).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 2,
        lr_init: 3e-3,
        lr_final: 3e-6,
        mixup_alpha: 0.0,
        dropout_p: Some(0.0),
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let empty = ds.subset(&[]);
    let run = train(&model, &cfg, &ds, &empty, |_| {}).unwrap();
    let first = run.log.iter().position(|r| r.train_loss < 1e-2).expect("loss never fell below 1e-2");
    assert!(first < 500);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let run = train(&small_model(4), &quick(2, 3), &small_data(8, 1), &small_data(6, 2), |_| {}).unwrap();
    for c in [&run.best, &run.last] {
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        let (net, meta) = load_network::<f64>(&back).unwrap();
        let opt = load_optimizer(&back, &net).unwrap();
        let cfg = train_config(&back).unwrap();
        let again = save_state(&net, opt.as_ref(), &meta, cfg.as_ref()).to_bytes();
        assert_eq!(bytes, again);
    }
    let (net, meta) = load_network::<f64>(&run.last).unwrap();
    assert_eq!(meta.epoch, 2);
    let x = random(&[3, 4, 29], &mut rng(5));
    assert_eq!(net.predict(&x).unwrap(), run.net.predict(&x).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    run.last.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), run.last.to_bytes());
    assert_eq!(Container::load(&path).unwrap().to_bytes(), run.last.to_bytes());
}

#[test]
fn zero_epochs_keeps_initial_state() {
    let model = small_model(4);
    let run = train(&model, &quick(0, 9), &small_data(8, 1), &small_data(6, 2), |_| {}).unwrap();
    assert!(run.log.is_empty());
    assert_eq!(log_csv(&run.log), format!("{LOG_HEADER}\n"));
    let (net, meta) = load_network::<f64>(&run.best).unwrap();
    assert_eq!((meta.epoch, meta.optimizer_step), (0, 0));
    let mut seeded = model.clone();
    seeded.seed = 9;
    let fresh = Network::<f64>::build(&seeded, 9).unwrap();
    let x = random(&[2, 4, 29], &mut rng(1));
    assert_eq!(net.predict(&x).unwrap(), fresh.predict(&x).unwrap());
}

#[test]
fn same_seed_same_log() {
    let (tr, va) = (small_data(10, 1), small_data(6, 2));
    let mut cfg = quick(3, 4);
    cfg.dropout_p = Some(0.3);
    let a = train(&small_model(4), &cfg, &tr, &va, |_| {}).unwrap();
    let b = train(&small_model(4), &cfg, &tr, &va, |_| {}).unwrap();
    assert_eq!(log_csv(&a.log), log_csv(&b.log));
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
    cfg.seed = 5;
    let c = train(&small_model(4), &cfg, &tr, &va, |_| {}).unwrap();
    assert_ne!(log_csv(&a.log), log_csv(&c.log));
}

#[test]
fn log_rows_have_fixed_columns() {
    let run = train(&small_model(4), &quick(2, 0), &small_data(8, 1), &small_data(6, 2), |_| {}).unwrap();
    let text = log_csv(&run.log);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.split(',').count() == 6));
    assert!(lines[1].starts_with("1,"));
    assert_eq!(run.log[0].lr, 1e-2);
    assert_eq!(run.log[1].lr, 1e-4);
}

#[test]
fn non_finite_loss_names_the_step() {
    let mut ds = small_data(8, 1);
    let mut data = ds.batch(&(0..8).collect::<Vec<_>>()).0.into_data();
    data[5 * 4 * 29] = f64::NAN;
    ds = Dataset::new(4, 29, 3, data, ds.labels().to_vec()).unwrap();
    let mut cfg = quick(1, 0);
    cfg.batch_size = 8;
    match train(&small_model(4), &cfg, &ds, &small_data(2, 2), |_| {}) {
        Err(Error::NonFinite { detail, .. }) => assert!(detail.contains("step 0"), "{detail}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training accepted a NaN input"),
    }
}

#[test]
fn training_rejects_mismatched_inputs() {
    let wrong = small_model(5);
    assert!(matches!(train(&wrong, &quick(1, 0), &small_data(4, 1), &small_data(2, 2), |_| {}), Err(Error::Config(_))));
    let mut cfg = quick(1, 0);
    cfg.lr_final = 1.0;
    assert!(train(&small_model(4), &cfg, &small_data(4, 1), &small_data(2, 2), |_| {}).is_err());
}

#[test]
fn feature_files_round_trip() {
    let ds = small_data(5, 3);
    let dir = tempfile::tempdir().unwrap();
    for name in ["f.csv", "f.bin"] {
        let path = dir.path().join(name);
        features::save(&ds, &path).unwrap();
        let back: Dataset<f64> = features::load(&path).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!((back.channels, back.seq_len), (4, 29));
        for i in 0..5 {
            assert_eq!(back.sample(i), ds.sample(i));
        }
    }
    let header = features::to_csv(&ds).lines().next().unwrap().to_string();
    assert!(header.starts_with("label,c0_t0,c0_t1,"));
    assert!(header.ends_with("c3_t28"));
}

#[test]
fn synthetic_task_is_reproducible() {
    let spec = SyntheticSpec { train_size: 20, val_size: 10, ..SyntheticSpec::default() };
    let a = SyntheticTask::new(spec.clone()).unwrap();
    let b = SyntheticTask::new(spec.clone()).unwrap();
    assert_eq!(a.generate(3), b.generate(3));
    assert_ne!(a.generate(3), a.generate(4));
    let tr: Dataset<f32> = a.train_set();
    let va: Dataset<f32> = a.val_set();
    assert_eq!((tr.len(), va.len(), tr.channels, tr.seq_len), (20, 10, 16, 29));
    assert!((0..10).all(|c| va.labels().iter().filter(|&&l| l == c).count() == 1));
    let codes: std::collections::HashSet<_> = (0..10).map(|c| { let k = a.code(c); (k.local, k.medium, k.lag) }).collect();
    assert_eq!(codes.len(), 10);
    let other = SyntheticTask::new(SyntheticSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(a.generate(3), other.generate(3));
}

#[test]
fn evaluation_counts() {
    let net = Network::<f64>::build(&small_model(4), 0).unwrap();
    let ds = small_data(7, 4);
    let ev = evaluate(&net, &ds, 3).unwrap();
    let total: u64 = ev.confusion.iter().flatten().sum();
    let diag: u64 = (0..3).map(|i| ev.confusion[i][i]).sum();
    assert_eq!(total, 7);
    assert_eq!(ev.accuracy, diag as f64 / 7.0);
    assert!(ev.loss.is_finite());
    assert!(evaluate(&net, &ds.subset(&[]), 3).is_err());
}
