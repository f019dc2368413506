//! k-fold training for Stage 1 (all five tasks) and Stage 2 (misogyny only,
//! with external negatives on the training side).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{bce_with_logit, Gradients, ParamGroup, ParamStore};
use crate::data::{read_file, write_file, Dataset, MemeSample};
use crate::encoders::{EncoderConfig, EncoderRegistry};
use crate::error::{Error, Result};
use crate::image::{load_and_resize, train_augment, ImageTensor};
use crate::labels::{LabelVector, Task};
use crate::metrics::{macro_f1_binary_task, multilabel_f1};
use crate::models::{Architecture, FusionModel, Logits, Mode, ModelConfig};
use crate::optim::{lr_schedule_with, AdamW};
use crate::predictions::PredictionMatrix;
use crate::seed;
use crate::split::FoldPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub text: f64,
    pub image: f64,
    pub fusion: f64,
    pub joint: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            text: 5e-5,
            image: 1e-4,
            fusion: 1e-3,
            joint: 5e-5,
        }
    }
}

impl LearningRates {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Text => self.text,
            ParamGroup::Image => self.image,
            ParamGroup::Fusion => self.fusion,
            ParamGroup::Joint => self.joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub patience: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub lr: LearningRates,
    /// Decoupled decay on non-bias parameters.
    pub weight_decay: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub augment: bool,
    /// Five-crop averaging for out-of-fold and test predictions.
    pub tta: bool,
    pub image_size: usize,
    pub crop_size: usize,
    /// Average the k fold models for test predictions; otherwise use fold 0.
    pub fold_mean: bool,
    /// Weight samples so misogynous positives and negatives contribute equally.
    pub class_balance: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 10,
            batch_size: 64,
            warmup_fraction: 0.1,
            patience: 3,
            k_folds: 5,
            seed: 42,
            lr: LearningRates::default(),
            weight_decay: 0.01,
            clip_norm: 1.0,
            augment: true,
            tta: true,
            image_size: 256,
            crop_size: 224,
            fold_mean: true,
            class_balance: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("train.epochs and train.batch_size must be positive".into());
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return fail(format!("train.warmup_fraction {} outside (0, 1)", self.warmup_fraction));
        }
        if self.patience >= self.epochs {
            return fail(format!("train.patience {} must be below train.epochs {}", self.patience, self.epochs));
        }
        if self.k_folds < 2 {
            return fail(format!("train.k_folds must be at least 2, got {}", self.k_folds));
        }
        if self.crop_size == 0 || self.crop_size > self.image_size {
            return fail(format!("train.crop_size {} must lie in 1..={}", self.crop_size, self.image_size));
        }
        if self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return fail("train.weight_decay and train.clip_norm must be non-negative".into());
        }
        Ok(())
    }

    fn tta_crop(&self) -> Option<usize> {
        self.tta.then_some(self.crop_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Five-task training on the main corpus.
    MultiTask,
    /// Misogyny-only training with external negatives.
    SingleTask,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::MultiTask => 1,
            Stage::SingleTask => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::MultiTask),
            2 => Ok(Stage::SingleTask),
            other => Err(Error::argument(format!("stage must be 1 or 2, got {other}"))),
        }
    }

    pub fn tasks(self) -> &'static [Task] {
        match self {
            Stage::MultiTask => &Task::ALL,
            Stage::SingleTask => &[Task::Misogynous],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage{}", self.number())
    }
}

/// Mean binary cross-entropy over tasks.
pub fn multitask_bce_loss(logits: &Logits, labels: &LabelVector, tasks: &[Task]) -> Result<f64> {
    if logits.values.len() != tasks.len() {
        return Err(Error::argument(format!(
            "{} logits for {} tasks",
            logits.values.len(),
            tasks.len()
        )));
    }
    let total: f64 = logits
        .values
        .iter()
        .zip(tasks)
        .map(|(&z, &t)| bce_with_logit(z, labels.as_f64(t)))
        .sum();
    Ok(total / tasks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    Stop { best_epoch: usize },
}

/// Stop once the best score is `patience` or more epochs old. Only a strict
/// improvement counts; the earliest best epoch wins.
pub fn early_stop(history: &[f64], patience: usize) -> EarlyStop {
    let Some(best) = (0..history.len()).reduce(|b, i| if history[i] > history[b] { i } else { b }) else {
        return EarlyStop::Continue;
    };
    if history.len() - 1 - best >= patience {
        EarlyStop::Stop { best_epoch: best }
    } else {
        EarlyStop::Continue
    }
}

/// Samples with their decoded working-size images.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub dataset: Dataset,
    pub images: Vec<ImageTensor>,
}

impl PreparedSet {
    /// Decode every image up front so missing files fail before training.
    pub fn load(dataset: &Dataset, image_size: usize) -> Result<Self> {
        let images = dataset
            .samples
            .iter()
            .map(|s| load_and_resize(&s.image, &s.id, image_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSet {
            dataset: dataset.clone(),
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn sample(&self, i: usize) -> &MemeSample {
        &self.dataset.samples[i]
    }

    fn labels(&self, i: usize) -> Result<LabelVector> {
        let s = self.sample(i);
        s.labels
            .ok_or_else(|| Error::argument(format!("sample `{}` has no labels", s.id)))
    }

    fn concat(&self, other: &PreparedSet) -> Result<PreparedSet> {
        let mut samples = self.dataset.samples.clone();
        samples.extend(other.dataset.samples.iter().cloned());
        let mut images = self.images.clone();
        images.extend(other.images.iter().cloned());
        Ok(PreparedSet {
            dataset: Dataset::new(samples, self.dataset.split_tag)?,
            images,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; `None` when there was no validation set.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub steps: usize,
}

fn sample_weights(set: &PreparedSet, train: &[usize], balance: bool) -> Result<BTreeMap<usize, f64>> {
    let mut labels = Vec::with_capacity(train.len());
    for &i in train {
        labels.push(set.labels(i)?);
    }
    if !balance {
        return Ok(train.iter().map(|&i| (i, 1.0)).collect());
    }
    let pos = labels.iter().filter(|l| l.get(Task::Misogynous)).count() as f64;
    let neg = train.len() as f64 - pos;
    let n = train.len() as f64;
    Ok(train
        .iter()
        .zip(&labels)
        .map(|(&i, l)| {
            let w = match (l.get(Task::Misogynous), pos > 0.0 && neg > 0.0) {
                (_, false) => 1.0,
                (true, true) => n / (2.0 * pos),
                (false, true) => n / (2.0 * neg),
            };
            (i, w)
        })
        .collect())
}

/// Probabilities for the rows `idx` of `set`.
pub fn predict_rows(model: &FusionModel, set: &PreparedSet, idx: &[usize], tta_crop: Option<usize>) -> Result<Vec<Vec<f64>>> {
    idx.iter()
        .map(|&i| model.predict_proba(&set.sample(i).text, &set.images[i], tta_crop))
        .collect()
}

/// Macro-F1 at threshold 0.5: the binary-task form for a misogyny-only
/// model, the multi-label form otherwise.
pub fn validation_score(model: &FusionModel, set: &PreparedSet, idx: &[usize]) -> Result<f64> {
    let probs = predict_rows(model, set, idx, None)?;
    let tasks = model.tasks();
    let pred: Vec<Vec<bool>> = probs.iter().map(|r| r.iter().map(|&p| p >= 0.5).collect()).collect();
    let mut gold = Vec::with_capacity(idx.len());
    for &i in idx {
        let l = set.labels(i)?;
        gold.push(tasks.iter().map(|&t| l.get(t)).collect::<Vec<bool>>());
    }
    if tasks == [Task::Misogynous] {
        let p: Vec<bool> = pred.iter().map(|r| r[0]).collect();
        let g: Vec<bool> = gold.iter().map(|r| r[0]).collect();
        macro_f1_binary_task(&p, &g)
    } else {
        Ok(multilabel_f1(&pred, &gold, tasks)?.macro_f1)
    }
}

/// Evaluation-mode mean loss over `idx`.
pub fn mean_loss(model: &FusionModel, set: &PreparedSet, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let logits = model.logits(&set.sample(i).text, &set.images[i])?;
        total += multitask_bce_loss(&logits, &set.labels(i)?, model.tasks())?;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Train `model` on rows `train` of `set`. With a non-empty `val` the model
/// is early-stopped on validation macro-F1 and the best epoch's weights are
/// restored. `stream` seeds shuffling, augmentation and dropout.
pub fn fit(
    model: &mut FusionModel,
    set: &PreparedSet,
    train: &[usize],
    val: &[usize],
    cfg: &TrainingConfig,
    stream: u64,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::argument("training side is empty"));
    }
    let weights = sample_weights(set, train, cfg.class_balance)?;
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut opt = AdamW::new(model.store(), cfg.weight_decay);
    let groups: Vec<ParamGroup> = model.parameter_groups().into_keys().collect();

    let mut records = Vec::new();
    let mut scores = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stopped_early = false;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order = train.to_vec();
        order.shuffle(&mut seed::rng(stream, "shuffle", &[epoch as u64]));
        let mut aug_rng = seed::rng(stream, "augment", &[epoch as u64]);
        let mut drop_rng = seed::rng(stream, "dropout", &[epoch as u64]);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(model.store());
            for &i in batch {
                let img = if cfg.augment {
                    train_augment(&set.images[i], &mut aug_rng)
                } else {
                    set.images[i].clone()
                };
                let labels = set.labels(i)?;
                let mut mode = Mode::Train {
                    dropout_rng: &mut drop_rng,
                };
                let (loss, mut g) = model.loss_and_grads(&set.sample(i).text, &img, &labels, &mut mode)?;
                let w = weights[&i];
                if w != 1.0 {
                    g.scale(w);
                }
                loss_sum += w * loss;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if cfg.clip_norm > 0.0 {
                grads.clip_global_norm(cfg.clip_norm);
            }
            let lrs = groups
                .iter()
                .map(|&g| Ok((g, lr_schedule_with(step, total, cfg.lr.get(g), cfg.warmup_fraction)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            opt.step(model.store_mut(), &grads, &lrs)?;
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Internal(format!("training loss diverged at epoch {epoch}")));
        }
        let val_score = if val.is_empty() {
            None
        } else {
            Some(validation_score(model, set, val)?)
        };
        log::debug!("epoch {epoch}: loss {train_loss:.5} val {val_score:?}");
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_score,
        });
        if let Some(score) = val_score {
            scores.push(score);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.store().clone()));
            }
            if let EarlyStop::Stop { .. } = early_stop(&scores, cfg.patience) {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    let best_epoch = best.map(|(_, epoch, store)| {
        *model.store_mut() = store;
        epoch
    });
    Ok(FitReport {
        epochs: records,
        best_epoch,
        stopped_early,
        steps: step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train_main: usize,
    pub n_train_external: usize,
    pub n_val: usize,
    pub fit: FitReport,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub stage: Stage,
    pub architecture: Architecture,
    pub models: Vec<FusionModel>,
    /// One row per training sample, predicted by the fold model that held it out.
    pub oof: PredictionMatrix,
    pub test: Option<PredictionMatrix>,
    pub folds: Vec<FoldReport>,
}

/// Everything a stage needs besides the data.
#[derive(Debug, Clone)]
pub struct StageSpec<'a> {
    pub arch: Architecture,
    pub model: &'a ModelConfig,
    pub encoders: &'a EncoderConfig,
    pub train: &'a TrainingConfig,
}

/// Stage 1: k-fold training of a five-task model on the main corpus.
pub fn train_stage1(train: &PreparedSet, test: Option<&PreparedSet>, plan: &FoldPlan, spec: &StageSpec<'_>) -> Result<StageOutput> {
    run_stage(Stage::MultiTask, train, None, test, plan, spec)
}

/// Stage 2: k-fold training of a misogyny-only model; every fold's training
/// side also holds all external negatives, validation never does.
pub fn train_stage2(
    train: &PreparedSet,
    external: &PreparedSet,
    test: Option<&PreparedSet>,
    plan: &FoldPlan,
    spec: &StageSpec<'_>,
) -> Result<StageOutput> {
    for s in &external.dataset.samples {
        match s.labels {
            Some(l) if l.is_all_negative() => {}
            _ => {
                return Err(Error::argument(format!(
                    "external sample `{}` is not an all-negative example",
                    s.id
                )))
            }
        }
    }
    run_stage(Stage::SingleTask, train, Some(external), test, plan, spec)
}

fn run_stage(
    stage: Stage,
    train: &PreparedSet,
    external: Option<&PreparedSet>,
    test: Option<&PreparedSet>,
    plan: &FoldPlan,
    spec: &StageSpec<'_>,
) -> Result<StageOutput> {
    spec.train.validate()?;
    plan.check_covers(&train.dataset)?;
    if !train.dataset.is_fully_labeled() {
        return Err(Error::argument("training corpus must be fully labeled"));
    }
    let registry = EncoderRegistry::from_config(spec.encoders)?;
    let tasks = stage.tasks();
    let n_main = train.len();
    let combined = match external {
        Some(ext) if !ext.is_empty() => train.concat(ext)?,
        _ => train.clone(),
    };
    let external_idx: Vec<usize> = (n_main..combined.len()).collect();
    let tta = spec.train.tta_crop();

    let mut oof: Vec<Option<Vec<f64>>> = vec![None; n_main];
    let mut models = Vec::with_capacity(plan.k);
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let (mut train_idx, val_idx) = plan.split_indices(&train.dataset, fold)?;
        let n_train_main = train_idx.len();
        train_idx.extend_from_slice(&external_idx);

        let mut model_cfg = spec.model.clone();
        model_cfg.init_seed = seed::derive(spec.model.init_seed, "fold-init", &[stage.number() as u64, fold as u64]);
        let mut model = FusionModel::build(spec.arch, &model_cfg, spec.encoders, &registry, tasks)?;
        let stream = seed::derive(
            spec.train.seed,
            "fold-stream",
            &[stage.number() as u64, spec.arch as u64, fold as u64],
        );
        let fit = fit(&mut model, &combined, &train_idx, &val_idx, spec.train, stream)?;
        log::info!(
            "{stage} {} fold {fold}: best epoch {:?}, {} epochs",
            spec.arch,
            fit.best_epoch,
            fit.epochs.len()
        );
        for (&i, row) in val_idx.iter().zip(predict_rows(&model, &combined, &val_idx, tta)?) {
            oof[i] = Some(row);
        }
        folds.push(FoldReport {
            fold,
            n_train_main,
            n_train_external: external_idx.len(),
            n_val: val_idx.len(),
            fit,
        });
        models.push(model);
    }

    let ids: Vec<String> = train.dataset.samples.iter().map(|s| s.id.clone()).collect();
    let rows = oof
        .into_iter()
        .zip(&ids)
        .map(|(r, id)| r.ok_or_else(|| Error::Internal(format!("sample `{id}` received no out-of-fold prediction"))))
        .collect::<Result<Vec<_>>>()?;
    let oof = PredictionMatrix::new(ids, tasks.to_vec(), rows)?;
    let test = match test {
        Some(t) => Some(predict_test(&models, t, spec.train)?),
        None => None,
    };
    Ok(StageOutput {
        stage,
        architecture: spec.arch,
        models,
        oof,
        test,
        folds,
    })
}

/// Test probabilities: the mean over fold models (summed in fold order), or
/// the first fold's model alone when `fold_mean` is off.
pub fn predict_test(models: &[FusionModel], test: &PreparedSet, cfg: &TrainingConfig) -> Result<PredictionMatrix> {
    let used = if cfg.fold_mean { models } else { &models[..models.len().min(1)] };
    let first = used.first().ok_or_else(|| Error::argument("no trained models"))?;
    let tasks = first.tasks().to_vec();
    let idx: Vec<usize> = (0..test.len()).collect();
    let mut sum = vec![vec![0.0; tasks.len()]; test.len()];
    for m in used {
        if m.tasks() != tasks.as_slice() {
            return Err(Error::argument("fold models disagree on their tasks"));
        }
        for (acc, row) in sum.iter_mut().zip(predict_rows(m, test, &idx, cfg.tta_crop())?) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    let n = used.len() as f64;
    let rows = sum
        .into_iter()
        .map(|r| r.into_iter().map(|v| (v / n).clamp(0.0, 1.0)).collect())
        .collect();
    let ids = test.dataset.samples.iter().map(|s| s.id.clone()).collect();
    PredictionMatrix::new(ids, tasks, rows)
}

/// The prior predictor used as the baseline row: every test sample gets the
/// training prevalence of each label.
pub fn prevalence_baseline(train: &Dataset, test_ids: &[String]) -> Result<PredictionMatrix> {
    let rates = train.label_prevalence().rates;
    PredictionMatrix::new(test_ids.to_vec(), Task::ALL.to_vec(), vec![rates.to_vec(); test_ids.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Started,
    Finished,
}

/// Record of one command run: effective configuration, inputs, the
/// choices the pipeline made on the user's behalf, and output digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub stage: Option<u8>,
    pub architecture: Option<Architecture>,
    pub config: serde_json::Value,
    pub fold_plan_hash: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub decisions: Vec<String>,
    pub status: RunStatus,
    pub folds: Vec<FoldReport>,
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_FORMAT: &str = "memefuse-run";

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            command: command.into(),
            stage: None,
            architecture: None,
            config,
            fold_plan_hash: None,
            inputs: BTreeMap::new(),
            decisions: Vec::new(),
            status: RunStatus::Started,
            folds: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(path, &text)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&read_file(path)?)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::config(format!("{} is not a run manifest", path.display())));
        }
        Ok(m)
    }
}

/// Choices the pipeline makes where the method leaves room, as written to
/// every training manifest.
pub fn training_decisions(cfg: &TrainingConfig, stage: Stage) -> Vec<String> {
    let mut d = vec![
        format!(
            "test aggregation: {}",
            if cfg.fold_mean { "arithmetic mean of the k fold models" } else { "fold 0 model only" }
        ),
        format!("early stopping: validation macro-F1 at threshold 0.5, patience {}", cfg.patience),
        format!("gradient clipping: global norm {}", cfg.clip_norm),
        format!("weight decay: {} on non-bias parameters", cfg.weight_decay),
        format!("lr schedule: linear warmup over ceil({} * steps), linear decay to 0", cfg.warmup_fraction),
        format!("class re-weighting: {}", if cfg.class_balance { "on" } else { "off" }),
        format!(
            "inference: {}",
            if cfg.tta {
                format!("five-crop {} from {} averaged", cfg.crop_size, cfg.image_size)
            } else {
                "single full image".into()
            }
        ),
    ];
    if stage == Stage::SingleTask {
        d.push("external negatives: added to the training side of every fold, never to validation".into());
    }
    d
}
