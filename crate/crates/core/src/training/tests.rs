use super::*;
use crate::decoder::DecoderConfig;
use crate::encoder::precompute;
use crate::graph::{Normalization, SparseGraph};
use crate::reservoir::ReservoirConfig;
use ndarray::Array3;
use tempfile::TempDir;

fn spec(units: usize, k: usize, washout: usize) -> PrecomputeSpec {
    PrecomputeSpec {
        reservoir: ReservoirConfig {
            units: vec![units, units],
            seed: 4,
            ..ReservoirConfig::default()
        },
        spatial_orders: k,
        bidirectional: false,
        include_global: false,
        normalization: Normalization::Asymmetric,
        washout,
    }
}

fn fixture(ds: &Dataset, sp: &PrecomputeSpec, train_end: usize) -> (TempDir, TrainingData) {
    let dir = tempfile::tempdir().unwrap();
    let stats = ChannelStats::from_training(ds, train_end).unwrap();
    let store = precompute(ds, &stats, sp, &dir.path().join("s.sgpe"), false).unwrap();
    let data = TrainingData::new(store, ds, stats, sp).unwrap();
    (dir, data)
}

fn ring(n: usize) -> SparseGraph {
    SparseGraph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n, 1.0))).unwrap()
}

fn wave_dataset(steps: usize, nodes: usize) -> Dataset {
    let values = Array3::from_shape_fn((steps, nodes, 1), |(t, i, _)| {
        (0.3 * t as f64 + i as f64).sin() + 0.5 * (0.11 * t as f64).cos()
    });
    Dataset::new(values, (0..steps as i64).collect(), ring(nodes)).unwrap()
}

fn decoder_for(data: &TrainingData, sp: &PrecomputeSpec, cfg: &DecoderConfig) -> Decoder<f32> {
    let layout = sp.layout(1);
    Decoder::new(cfg, &layout, ndarray::Array2::zeros((data.num_nodes(), 0))).unwrap()
}

fn small_cfg(horizon: usize) -> DecoderConfig {
    DecoderConfig {
        group_width: 8,
        hidden: vec![32, 32],
        dropout: 0.0,
        pos_enc_dim: 4,
        horizon,
        ..DecoderConfig::default()
    }
}

#[test]
fn zero_decoder_on_zero_targets_does_not_drift() {
    let ds = Dataset::new(Array3::zeros((40, 3, 1)), (0..40).collect(), ring(3)).unwrap();
    let sp = spec(6, 1, 4);
    let (_dir, data) = fixture(&ds, &sp, 30);
    let mut dec = decoder_for(&data, &sp, &small_cfg(2));
    for t in dec.tensors_mut() {
        t.data.fill(0.0);
    }
    let before = dec.clone();
    let region = data.region(&(0..30), 2).unwrap();
    let mut trainer = Trainer::new(&data, &dec, &TrainConfig::default(), region).unwrap();
    for _ in 0..5 {
        assert_eq!(trainer.update(&mut dec, 1e-2).unwrap(), 0.0);
    }
    let flat = |d: &Decoder<f32>| d.tensors().iter().flat_map(|t| t.data.to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&dec), flat(&before));
}

#[test]
fn masked_mae_ignores_unobserved_and_ties() {
    let pred = Array3::from_shape_vec((1, 4, 1), vec![1.0f32, 2.0, 3.0, 5.0]).unwrap();
    let target = Array3::from_shape_vec((1, 4, 1), vec![0.0f32, 2.0, 9.0, 1.0]).unwrap();
    let mask = Array3::from_shape_vec((1, 4, 1), vec![true, true, true, false]).unwrap();
    let (loss, up) = masked_mae(&pred, &target, &mask);
    assert!((loss - 7.0 / 3.0).abs() < 1e-12);
    let third = 1.0f32 / 3.0;
    assert_eq!(up.iter().copied().collect::<Vec<_>>(), vec![third, 0.0, -third, 0.0]);
}

#[test]
fn memorizes_a_single_short_series() {
    let ds = wave_dataset(50, 1);
    let sp = PrecomputeSpec {
        reservoir: ReservoirConfig {
            units: vec![32, 32],
            seed: 2,
            ..ReservoirConfig::default()
        },
        ..spec(32, 0, 5)
    };
    let (_dir, data) = fixture(&ds, &sp, 50);
    let mut dec = decoder_for(
        &data,
        &sp,
        &DecoderConfig {
            group_width: 16,
            hidden: vec![64, 64],
            pos_enc_dim: 0,
            horizon: 1,
            dropout: 0.0,
            ..DecoderConfig::default()
        },
    );
    let split = Split {
        train: 0..50,
        val: 50..50,
        test: 50..50,
    };
    let cfg = TrainConfig {
        batch_size: 32,
        lr: 3e-3,
        max_epochs: 20,
        batches_per_epoch: 100,
        ..TrainConfig::default()
    };
    let out = train(&data, &mut dec, &cfg, &split).unwrap();
    assert!(out.updates <= 2000);
    assert!(out.best_epoch.is_none());
    let report = evaluate(&dec, &data, &split.train).unwrap();
    assert!(report.overall.mae < 0.01, "train MAE {}", report.overall.mae);
}

#[test]
fn best_validation_epoch_is_restored() {
    let ds = wave_dataset(300, 4);
    let sp = spec(8, 1, 10);
    let (_dir, data) = fixture(&ds, &sp, 200);
    let mut dec = decoder_for(&data, &sp, &DecoderConfig { dropout: 0.2, ..small_cfg(3) });
    let split = SplitSpec::Fractions {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    }
    .resolve(&ds.timestamps)
    .unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        lr: 1e-2,
        max_epochs: 12,
        batches_per_epoch: 10,
        patience: 3,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&data, &mut dec, &cfg, &split).unwrap();
    let min = out.history.iter().map(|r| r.val_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_mae, min);
    assert_eq!(out.history[out.best_epoch.unwrap()].val_mae, min);
    let val = validation_anchors(&data.region(&split.val, 3).unwrap(), cfg.val_samples, cfg.seed);
    assert_eq!(data.normalized_mae(&dec, &val).unwrap(), min);
    assert!(out.history.iter().all(|r| r.batch_per_sec > 0.0));
}

#[test]
fn training_is_deterministic() {
    let ds = wave_dataset(120, 3);
    let sp = spec(6, 2, 8);
    let (_dir, data) = fixture(&ds, &sp, 80);
    let split = SplitSpec::default().resolve(&ds.timestamps).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 3,
        batches_per_epoch: 7,
        ..TrainConfig::default()
    };
    let run = || {
        let mut dec = decoder_for(&data, &sp, &DecoderConfig { dropout: 0.3, ..small_cfg(2) });
        let out = train(&data, &mut dec, &cfg, &split).unwrap();
        let report = evaluate(&dec, &data, &split.test).unwrap();
        (out.history.iter().map(|r| (r.train_mae, r.val_mae)).collect::<Vec<_>>(), report)
    };
    assert_eq!(run(), run());
}

#[test]
fn update_budget_stops_training() {
    let ds = wave_dataset(80, 2);
    let sp = spec(4, 1, 4);
    let (_dir, data) = fixture(&ds, &sp, 60);
    let split = SplitSpec::default().resolve(&ds.timestamps).unwrap();
    let mut dec = decoder_for(&data, &sp, &small_cfg(1));
    let cfg = TrainConfig {
        max_updates: Some(25),
        batches_per_epoch: 10,
        ..TrainConfig::default()
    };
    let out = train(&data, &mut dec, &cfg, &split).unwrap();
    assert_eq!(out.updates, 25);
    assert_eq!(out.stop, StopReason::MaxUpdates);
    assert_eq!(out.history.len(), 3);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let ds = wave_dataset(60, 2);
    let sp = spec(4, 1, 4);
    let (_dir, data) = fixture(&ds, &sp, 40);
    let mut dec = decoder_for(&data, &sp, &small_cfg(1));
    let n = dec.tensors().len();
    dec.tensors_mut()[n - 2].data[0] = f32::NAN;
    let region = data.region(&(0..40), 1).unwrap();
    let mut trainer = Trainer::new(&data, &dec, &TrainConfig::default(), region).unwrap();
    match trainer.update(&mut dec, 1e-3) {
        Err(SgpError::NonFinite(msg)) => assert!(msg.contains("lr") && msg.contains("batch")),
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn constant_forecast_metrics_by_hand() {
    // five targets after the washout; a zero decoder predicts the training mean
    let series = [1.0, 3.0, 2.0, 6.0, 4.0, 0.0, 5.0];
    let values = Array3::from_shape_fn((7, 1, 1), |(t, _, _)| series[t]);
    let ds = Dataset::new(values, (0..7).collect(), SparseGraph::empty(1)).unwrap();
    let sp = spec(3, 0, 1);
    let (_dir, data) = fixture(&ds, &sp, 7);
    let mut dec = decoder_for(&data, &sp, &small_cfg(1));
    for t in dec.tensors_mut() {
        t.data.fill(0.0);
    }
    let report = evaluate(&dec, &data, &(0..7)).unwrap();
    let mean = 3.0;
    let expected = [2.0f64, 6.0, 4.0, 0.0, 5.0].iter().map(|x| (x - mean).abs()).sum::<f64>() / 5.0;
    assert_eq!(report.overall.count, 5);
    assert!((report.overall.mae - expected).abs() < 1e-10);
}

#[test]
fn report_lists_default_horizon_offsets() {
    let ds = wave_dataset(80, 2);
    let sp = spec(4, 1, 4);
    let (_dir, data) = fixture(&ds, &sp, 60);
    let dec = decoder_for(&data, &sp, &small_cfg(12));
    let report = evaluate(&dec, &data, &(40..80)).unwrap();
    let steps: Vec<usize> = report.horizons.iter().map(|(h, _)| *h).collect();
    assert_eq!(steps, vec![3, 6, 12]);
    assert!(matches!(evaluate(&dec, &data, &(70..80)), Err(SgpError::Config(_))));
}

#[test]
fn stale_store_is_rejected() {
    let ds = wave_dataset(40, 2);
    let sp = spec(4, 1, 4);
    let dir = tempfile::tempdir().unwrap();
    let stats = ChannelStats::from_training(&ds, 30).unwrap();
    let store = precompute(&ds, &stats, &sp, &dir.path().join("s.sgpe"), false).unwrap();
    let other = ChannelStats::from_training(&ds, 20).unwrap();
    assert!(matches!(
        TrainingData::new(store, &ds, other, &sp),
        Err(SgpError::Fingerprint(_))
    ));
}

#[test]
fn benchmark_reports_trimmed_median() {
    let ds = wave_dataset(60, 3);
    let sp = spec(4, 1, 4);
    let (_dir, data) = fixture(&ds, &sp, 40);
    let dec = decoder_for(&data, &sp, &small_cfg(2));
    let t = benchmark_updates(&data, &dec, &TrainConfig::default(), &(0..40), 30, 5).unwrap();
    assert_eq!(t.measured, 20);
    assert!(t.median_secs > 0.0 && (t.batches_per_sec * t.median_secs - 1.0).abs() < 1e-9);
    assert!(benchmark_updates(&data, &dec, &TrainConfig::default(), &(0..40), 10, 5).is_err());
}
