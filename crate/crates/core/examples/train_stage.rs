//! Stage-1 k-fold training of one architecture with out-of-fold and
//! fold-averaged test predictions.

use memefuse::encoders::EncoderConfig;
use memefuse::metrics::evaluate;
use memefuse::models::{Architecture, ModelConfig};
use memefuse::split::stratified_kfold;
use memefuse::synth::{synthetic_dataset, SynthConfig};
use memefuse::training::{train_stage1, PreparedSet, StageSpec, TrainingConfig};

fn main() -> memefuse::error::Result<()> {
    let arch: Architecture = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "double_tower".into())
        .parse()?;
    let ds = synthetic_dataset(&SynthConfig {
        n: 120,
        seed: 11,
        ..SynthConfig::default()
    })?;
    let held_out = synthetic_dataset(&SynthConfig {
        n: 40,
        seed: 12,
        id_prefix: "held".into(),
        ..SynthConfig::default()
    })?;
    let train_cfg = TrainingConfig {
        epochs: 6,
        batch_size: 8,
        image_size: 64,
        crop_size: 56,
        k_folds: 3,
        ..TrainingConfig::default()
    };
    let model_cfg = ModelConfig::default();
    let enc = EncoderConfig::default();
    let train = PreparedSet::load(&ds, train_cfg.image_size)?;
    let test = PreparedSet::load(&held_out, train_cfg.image_size)?;
    let plan = stratified_kfold(&ds, train_cfg.k_folds, train_cfg.seed)?;
    let spec = StageSpec {
        arch,
        model: &model_cfg,
        encoders: &enc,
        train: &train_cfg,
    };
    let out = train_stage1(&train, Some(&test), &plan, &spec)?;
    for f in &out.folds {
        println!(
            "fold {}: {} train, {} val, best epoch {:?}, {} steps",
            f.fold, f.n_train_main, f.n_val, f.fit.best_epoch, f.fit.steps
        );
    }
    let gold = |d: &memefuse::data::Dataset| {
        d.samples
            .iter()
            .map(|s| (s.id.clone(), s.labels.expect("synthetic rows are labeled")))
            .collect::<Vec<_>>()
    };
    let oof = evaluate(&out.oof, &gold(&ds), 0.5)?;
    println!("out-of-fold:\n{}", oof.render(memefuse::metrics::F1Mode::Macro));
    let test_eval = evaluate(out.test.as_ref().expect("test set given"), &gold(&held_out), 0.5)?;
    println!("held-out:\n{}", test_eval.render(memefuse::metrics::F1Mode::Macro));
    Ok(())
}
