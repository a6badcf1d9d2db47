mod common;

use std::collections::BTreeSet;

use common::small_dataset;
use msda::adaptation::{DanKind, TrainMode};
use msda::data::Dataset;
use msda::detector::checkpoint::Checkpoint;
use msda::detector::Scale;
use msda::harness::{
    detector_from_checkpoint, pixel_probe, run_ablation, train, ProbeConfig, RunConfig, TrainingLog, CHECKPOINT_FILE,
    LOG_FILE, SUMMARY_FILE,
};
use msda::params::ParamStore;
use msda::Error;

fn quick(mode: TrainMode) -> RunConfig {
    let mut c = RunConfig {
        mode,
        batch_size: 8,
        iterations: 10,
        dan_variant: DanKind::Baseline,
        ..RunConfig::default()
    };
    c.optimizer.warmup_iterations = 2;
    c
}

fn data() -> Dataset {
    small_dataset(48, 30)
}

fn detector_part(p: &ParamStore) -> ParamStore {
    p.filter(|g| g != "dan")
}

fn bitwise_equal(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((ka, ta), (kb, tb))| {
            ka == kb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

#[test]
fn repeated_runs_produce_identical_logs() {
    let ds = data();
    let cfg = quick(TrainMode::Adapt);
    let a = train(&cfg, &ds).unwrap();
    let b = train(&cfg, &ds).unwrap();
    assert!(a.log.same_values(&b.log));
    assert!(bitwise_equal(&a.params, &b.params));
}

#[test]
fn log_has_one_finite_record_per_iteration() {
    let ds = data();
    let out = train(&quick(TrainMode::Adapt), &ds).unwrap();
    assert_eq!(out.log.len(), 10);
    assert_eq!(out.log.classifiers.len(), 3);
    for (i, r) in out.log.records.iter().enumerate() {
        assert_eq!(r.iteration, i);
        assert!(r.l_det.is_finite() && r.l_t.is_finite());
        assert_eq!(r.l_dc.len(), 3);
        let mean = r.l_dc.iter().sum::<f64>() / 3.0;
        assert!((r.l_dc_mean.unwrap() - mean).abs() < 1e-12);
        assert!((r.l_t - (r.l_det + 0.1 * mean)).abs() < 1e-12);
    }
}

#[test]
fn unified_variant_logs_a_single_classifier() {
    let ds = data();
    let cfg = RunConfig {
        dan_variant: DanKind::Uc,
        ..quick(TrainMode::Adapt)
    };
    let out = train(&cfg, &ds).unwrap();
    assert_eq!(out.log.classifiers, vec![msda::adaptation::MapScale::Unified]);
}

#[test]
fn zero_lambda_matches_source_only_trajectory() {
    let ds = data();
    let adapted = train(
        &RunConfig {
            lambda: 0.0,
            ..quick(TrainMode::Adapt)
        },
        &ds,
    )
    .unwrap();
    let plain = train(&quick(TrainMode::SourceOnly), &ds).unwrap();
    assert!(bitwise_equal(&detector_part(&adapted.params), &plain.params));
    for (a, b) in adapted.log.records.iter().zip(&plain.log.records) {
        assert_eq!(a.l_det.to_bits(), b.l_det.to_bits());
    }
}

#[test]
fn empty_scale_set_matches_source_only_training() {
    let ds = data();
    let rep = run_ablation(&quick(TrainMode::Adapt), &ds, &[BTreeSet::new()]).unwrap();
    assert_eq!(rep.rows.len(), 1);
    let plain = train(&quick(TrainMode::SourceOnly), &ds).unwrap();
    assert!(bitwise_equal(&rep.rows[0].outcome.params, &plain.params));
    assert!(rep.rows[0].outcome.log.same_values(&plain.log));
}

#[test]
fn detached_branches_receive_no_gradient() {
    let ds = data();
    let cfg = RunConfig {
        active_scales: vec![Scale::F3],
        ..quick(TrainMode::Adapt)
    };
    let out = train(&cfg, &ds).unwrap();
    let g = &out.inactive_branch_grad;
    assert_eq!(g.keys().copied().collect::<Vec<_>>(), vec![Scale::F1, Scale::F2]);
    assert!(g.values().all(|&v| v == 0.0));
    assert_eq!(out.log.classifiers.len(), 1);
}

#[test]
fn oracle_and_source_only_have_no_domain_terms() {
    let ds = data();
    for mode in [TrainMode::Oracle, TrainMode::SourceOnly] {
        let out = train(&quick(mode), &ds).unwrap();
        assert!(out.log.classifiers.is_empty());
        assert!(!out.params.groups().contains("dan"));
        assert!(out.log.records.iter().all(|r| r.l_dc_mean.is_none() && r.l_t == r.l_det));
    }
}

#[test]
fn outputs_are_written_and_reload() {
    let ds = data();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: Some(dir.path().to_path_buf()),
        checkpoint_every: 4,
        eval_every: 5,
        ..quick(TrainMode::Adapt)
    };
    let out = train(&cfg, &ds).unwrap();
    for f in [CHECKPOINT_FILE, LOG_FILE, SUMMARY_FILE, "checkpoint_000004.msda", "checkpoint_000008.msda"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(out.log.evals.iter().map(|e| e.iteration).collect::<Vec<_>>(), vec![5, 10]);

    let (log, warning) = TrainingLog::read_csv(dir.path().join(LOG_FILE)).unwrap();
    assert!(warning.is_none());
    assert!(log.same_values(&out.log));

    let ckpt = Checkpoint::load(dir.path().join(CHECKPOINT_FILE)).unwrap();
    let (config, detector) = detector_from_checkpoint(&ckpt).unwrap();
    assert_eq!(config, out.config);
    assert!(config.detector.anchors.is_some());
    let images = ds.split("target_val").unwrap().batch(&[0, 1, 2]);
    let a = detector.predict(&images, &ckpt.params).unwrap();
    let b = out.detector().unwrap().predict(&images, &out.params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn diverging_run_aborts_with_its_iteration() {
    let ds = data();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        iterations: 200,
        out_dir: Some(dir.path().to_path_buf()),
        ..quick(TrainMode::Adapt)
    };
    cfg.optimizer.learning_rate = 1e6;
    cfg.optimizer.clip_norm = None;
    let err = train(&cfg, &ds).unwrap_err();
    let Error::NonFinite { iteration, .. } = err else {
        panic!("{err:?}")
    };
    assert_eq!(err.exit_code(), 4);
    let (log, _) = TrainingLog::read_csv(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), iteration);
    let summary = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains("non-finite"));
}

#[test]
fn dataset_problems_surface_before_training() {
    let mut ds = data();
    let cfg = RunConfig {
        detector: msda::detector::DetectorConfig {
            num_classes: 2,
            ..Default::default()
        },
        ..quick(TrainMode::Adapt)
    };
    assert_eq!(train(&cfg, &ds).unwrap_err().exit_code(), 3);

    ds.splits.get_mut("target_train").unwrap().images.clear();
    ds.splits.get_mut("target_train").unwrap().boxes.clear();
    assert_eq!(train(&quick(TrainMode::Adapt), &ds).unwrap_err().exit_code(), 3);
    // source-only never reads the target split
    train(&quick(TrainMode::SourceOnly), &ds).unwrap();

    ds.splits.remove("source_train");
    assert!(matches!(train(&quick(TrainMode::SourceOnly), &ds), Err(Error::Data(_))));
}

#[test]
fn invalid_config_is_rejected_before_data_is_touched() {
    let ds = data();
    let cfg = RunConfig {
        batch_size: 5,
        ..quick(TrainMode::Adapt)
    };
    assert_eq!(train(&cfg, &ds).unwrap_err().exit_code(), 2);
}

#[test]
fn raw_pixels_separate_the_domains() {
    let ds = small_dataset(0, 200);
    let acc = pixel_probe(
        ds.split("source_val").unwrap(),
        ds.split("target_val").unwrap(),
        &ProbeConfig::default(),
    )
    .unwrap();
    assert!(acc > 0.9, "{acc}");
}
