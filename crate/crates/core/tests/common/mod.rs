#![allow(dead_code)]

use memefuse::autograd::ParamId;
use memefuse::encoders::{EncoderConfig, EncoderRegistry};
use memefuse::image::ImageTensor;
use memefuse::labels::{LabelVector, Task};
use memefuse::models::{Architecture, FusionModel, Mode, ModelConfig};
use memefuse::synth::{synthetic_dataset, SynthConfig};
use memefuse::training::{LearningRates, PreparedSet, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;
/// Gradients smaller than this on both sides are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-7;

pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_name: String,
}

pub fn build(arch: Architecture, cfg: &ModelConfig, tasks: &[Task]) -> FusionModel {
    let enc = EncoderConfig::default();
    let reg = EncoderRegistry::from_config(&enc).unwrap();
    FusionModel::build(arch, cfg, &enc, &reg, tasks).unwrap()
}

pub fn small_set(n: usize, seed: u64, size: usize) -> PreparedSet {
    let ds = synthetic_dataset(&SynthConfig {
        n,
        seed,
        ..Default::default()
    })
    .unwrap();
    PreparedSet::load(&ds, size).unwrap()
}

fn eval_loss(model: &FusionModel, text: &str, img: &ImageTensor, labels: &LabelVector) -> f64 {
    model.loss_and_grads(text, img, labels, &mut Mode::Eval).unwrap().0
}

/// Central differences on `per_param` random entries of every trainable
/// parameter, compared with the tape gradient.
pub fn gradient_check(
    model: &mut FusionModel,
    text: &str,
    img: &ImageTensor,
    labels: &LabelVector,
    per_param: usize,
    seed: u64,
) -> GradCheck {
    let (_, grads) = model.loss_and_grads(text, img, labels, &mut Mode::Eval).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<(ParamId, String, usize)> = model
        .store()
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.name.clone(), p.value.data().len()))
        .collect();
    let mut out = GradCheck {
        checked: 0,
        worst_rel: 0.0,
        worst_name: String::new(),
    };
    for (id, name, len) in ids {
        let analytic = grads.get(id).map(|m| m.data().to_vec()).unwrap_or_else(|| vec![0.0; len]);
        for _ in 0..per_param.min(len) {
            let k = rng.gen_range(0..len);
            let orig = model.store().value(id).data()[k];
            model.store_mut().value_mut(id).data_mut()[k] = orig + GRAD_STEP;
            let up = eval_loss(model, text, img, labels);
            model.store_mut().value_mut(id).data_mut()[k] = orig - GRAD_STEP;
            let down = eval_loss(model, text, img, labels);
            model.store_mut().value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let a = analytic[k];
            let rel = if a.abs().max(numeric.abs()) < GRAD_FLOOR {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / a.abs().max(numeric.abs())
            };
            out.checked += 1;
            if rel > out.worst_rel {
                out.worst_rel = rel;
                out.worst_name = format!("{name}[{k}]");
            }
        }
    }
    out
}

/// Model geometry small enough for finite differences on every parameter.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        mlp_hidden: vec![16, 8],
        width: 16,
        heads: 2,
        ffn_dim: 32,
        max_text_len: 12,
        ..ModelConfig::default()
    }
}

/// Settings under which both architectures memorize 32 samples.
pub fn overfit_config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 4,
        lr: LearningRates {
            text: 0.05,
            image: 0.01,
            fusion: 0.01,
            joint: 0.001,
        },
        augment: false,
        tta: false,
        image_size: 64,
        crop_size: 64,
        weight_decay: 0.0,
        ..TrainingConfig::default()
    }
}

/// F1 of one binary column by definition: 2·tp / (2·tp + fp + fn), 0 when
/// the denominator is 0.
pub fn oracle_f1(pred: &[bool], gold: &[bool]) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let d = 2.0 * tp + fp + fn_;
    if d == 0.0 {
        0.0
    } else {
        2.0 * tp / d
    }
}

/// `--set` overrides for a pipeline run that finishes in seconds.
pub fn quick_overrides() -> Vec<String> {
    [
        "synth.n=48",
        "synth.n_test=16",
        "synth.n_external=24",
        "train.epochs=3",
        "train.patience=2",
        "train.k_folds=3",
        "train.image_size=32",
        "train.crop_size=24",
        "train.batch_size=8",
        "model.width=32",
        "model.ffn_dim=64",
        "model.mlp_hidden=[32, 16]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}
