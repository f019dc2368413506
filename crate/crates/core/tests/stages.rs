mod common;

use std::collections::BTreeSet;

use common::*;
use memefuse::data::{load_external_negatives, load_main_corpus, OffenseFilter};
use memefuse::encoders::EncoderConfig;
use memefuse::error::Error;
use memefuse::labels::Task;
use memefuse::models::{Architecture, ModelConfig};
use memefuse::split::stratified_kfold;
use memefuse::synth::{write_synthetic_corpus, SynthConfig};
use memefuse::training::{
    fit, mean_loss, predict_test, train_stage1, train_stage2, PreparedSet, StageSpec, TrainingConfig,
};

struct Corpus {
    _dir: tempfile::TempDir,
    train: PreparedSet,
    test: PreparedSet,
    external: PreparedSet,
}

fn corpus() -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n: 36,
        seed: 9,
        ..Default::default()
    };
    write_synthetic_corpus(dir.path(), &cfg, 10, 14).unwrap();
    let load = |f: &str, labeled| load_main_corpus(&dir.path().join(f), labeled).unwrap();
    let ext = load_external_negatives(&dir.path().join("external.tsv"), &OffenseFilter::default()).unwrap();
    Corpus {
        train: PreparedSet::load(&load("train.tsv", true), 32).unwrap(),
        test: PreparedSet::load(&load("test.tsv", false), 32).unwrap(),
        external: PreparedSet::load(&ext.dataset, 32).unwrap(),
        _dir: dir,
    }
}

fn quick_train() -> TrainingConfig {
    TrainingConfig {
        epochs: 2,
        patience: 1,
        batch_size: 8,
        image_size: 32,
        crop_size: 24,
        ..TrainingConfig::default()
    }
}

fn quick_model() -> ModelConfig {
    ModelConfig {
        mlp_hidden: vec![32, 16],
        width: 32,
        ffn_dim: 64,
        ..ModelConfig::default()
    }
}

#[test]
fn stage1_out_of_fold_rows_cover_training_once() {
    let c = corpus();
    let plan = stratified_kfold(&c.train.dataset, 3, 1).unwrap();
    let (m, e, t) = (quick_model(), EncoderConfig::default(), quick_train());
    for arch in [Architecture::DoubleTower, Architecture::SingleFlow] {
        let spec = StageSpec {
            arch,
            model: &m,
            encoders: &e,
            train: &t,
        };
        let out = train_stage1(&c.train, Some(&c.test), &plan, &spec).unwrap();
        let ids: Vec<&str> = c.train.dataset.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(out.oof.ids(), ids.as_slice());
        assert_eq!(out.oof.tasks(), Task::ALL.as_slice());
        assert_eq!(out.models.len(), 3);
        assert_eq!(out.folds.iter().map(|f| f.n_val).sum::<usize>(), c.train.len());
        let test = out.test.unwrap();
        assert_eq!(test.len(), c.test.len());
        assert!(test.rows().iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn stage2_keeps_external_out_of_validation() {
    let c = corpus();
    let plan = stratified_kfold(&c.train.dataset, 3, 2).unwrap();
    let (m, e, t) = (quick_model(), EncoderConfig::default(), quick_train());
    let spec = StageSpec {
        arch: Architecture::DoubleTower,
        model: &m,
        encoders: &e,
        train: &t,
    };
    let out = train_stage2(&c.train, &c.external, Some(&c.test), &plan, &spec).unwrap();
    let external: BTreeSet<&str> = c.external.dataset.samples.iter().map(|s| s.id.as_str()).collect();
    assert!(!external.is_empty());
    assert!(out.oof.ids().iter().all(|id| !external.contains(id.as_str())));
    assert_eq!(out.oof.len(), c.train.len());
    assert_eq!(out.oof.tasks(), &[Task::Misogynous]);
    for f in &out.folds {
        assert_eq!(f.n_train_external, c.external.len());
        assert_eq!(f.n_train_main + f.n_val, c.train.len());
        let (_, val) = plan.split_indices(&c.train.dataset, f.fold).unwrap();
        assert_eq!(f.n_val, val.len());
    }
}

#[test]
fn stage2_rejects_positive_external_rows() {
    let c = corpus();
    let plan = stratified_kfold(&c.train.dataset, 3, 2).unwrap();
    let (m, e, t) = (quick_model(), EncoderConfig::default(), quick_train());
    let spec = StageSpec {
        arch: Architecture::DoubleTower,
        model: &m,
        encoders: &e,
        train: &t,
    };
    // the main corpus holds positives, so it is not a valid negative pool
    let err = train_stage2(&c.train, &c.train, None, &plan, &spec).unwrap_err();
    assert!(matches!(err, Error::Argument(_)));
}

#[test]
fn fold_zero_only_when_fold_mean_is_off() {
    let c = corpus();
    let plan = stratified_kfold(&c.train.dataset, 3, 4).unwrap();
    let (m, e, t) = (quick_model(), EncoderConfig::default(), quick_train());
    let spec = StageSpec {
        arch: Architecture::DoubleTower,
        model: &m,
        encoders: &e,
        train: &t,
    };
    let out = train_stage1(&c.train, None, &plan, &spec).unwrap();
    let single = TrainingConfig { fold_mean: false, ..t.clone() };
    let only0 = predict_test(&out.models, &c.test, &single).unwrap();
    let direct = predict_test(&out.models[..1], &c.test, &t).unwrap();
    assert_eq!(only0, direct);
    let mean = predict_test(&out.models, &c.test, &t).unwrap();
    let per_fold: Vec<_> = (0..3)
        .map(|k| predict_test(&out.models[k..k + 1], &c.test, &t).unwrap())
        .collect();
    for (r, row) in mean.rows().iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let by_hand = per_fold.iter().map(|p| p.rows()[r][j]).sum::<f64>() / 3.0;
            assert!((v - by_hand).abs() < 1e-12);
        }
    }
}

#[test]
fn training_lowers_the_loss() {
    let set = small_set(24, 6, 32);
    let idx: Vec<usize> = (0..set.len()).collect();
    let cfg = TrainingConfig {
        epochs: 4,
        ..overfit_config()
    };
    let cfg = TrainingConfig {
        image_size: 32,
        crop_size: 32,
        ..cfg
    };
    for arch in [Architecture::DoubleTower, Architecture::SingleFlow] {
        let mut model = build(arch, &quick_model(), &Task::ALL);
        let before = mean_loss(&model, &set, &idx).unwrap();
        let report = fit(&mut model, &set, &idx, &[], &cfg, 3).unwrap();
        let after = mean_loss(&model, &set, &idx).unwrap();
        assert!(after < before, "{arch}: {before} -> {after}");
        assert_eq!(report.best_epoch, None);
        assert_eq!(report.steps, 4 * 24_usize.div_ceil(4));
    }
}
