//! The batch commands behind the `memefuse` binary. Each reads its inputs
//! from the configuration or from the run directory and writes its outputs
//! back into the run directory.
//!
//! Run-directory layout:
//!
//! ```text
//! <run>/config.toml                      optional, loaded before --config files
//! <run>/corpus/                          synthesize-corpus
//! <run>/split/folds.tsv                  split
//! <run>/stage1/<arch>/stage1_oof.tsv     train --stage 1
//! <run>/stage1/<arch>/stage1_test.tsv
//! <run>/stage2/<arch>/stage2_test.tsv    train --stage 2
//! <run>/stage<n>/<arch>/models/fold<i>/
//! <run>/ensemble/ensemble_test.tsv       ensemble
//! <run>/postprocess/submission_b.tsv     postprocess
//! <run>/evaluation/report.txt            evaluate
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::data::{load_external_negatives, load_main_corpus, read_file, write_file, Dataset, OffenseFilter};
use crate::encoders::EncoderRegistry;
use crate::error::{Error, Result};
use crate::labels::{LabelVector, Task};
use crate::metrics::{evaluate as score, results_table, results_tsv, ResultRow, ZERO_DIVISION_NOTE};
use crate::models::{Architecture, FusionModel};
use crate::postprocess::{binarize, ensemble as combine, hierarchy_postprocess};
use crate::predictions::PredictionMatrix;
use crate::seed;
use crate::split::{fold_balance_report, stratified_kfold, FoldPlan};
use crate::synth::{write_synthetic_corpus, CorpusSummary};
use crate::training::{
    predict_test, prevalence_baseline, train_stage1, train_stage2, training_decisions, PreparedSet, RunManifest,
    RunStatus, Stage, StageSpec,
};

/// Environment variable naming the directory that holds run directories.
pub const RUN_ROOT_ENV: &str = "MEMEFUSE_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";

/// `explicit` if given, else `$MEMEFUSE_RUN_ROOT/<name>` (root defaults to `runs`).
pub fn resolve_run_dir(explicit: Option<&Path>, name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT), PathBuf::from);
            root.join(name)
        }
    }
}

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }

    pub fn folds(&self) -> PathBuf {
        self.split_dir().join("folds.tsv")
    }

    pub fn stage_dir(&self, stage: Stage, arch: Architecture) -> PathBuf {
        self.root.join(stage.to_string()).join(arch.name())
    }

    pub fn stage_oof(&self, stage: Stage, arch: Architecture) -> PathBuf {
        self.stage_dir(stage, arch).join(format!("{stage}_oof.tsv"))
    }

    pub fn stage_test(&self, stage: Stage, arch: Architecture) -> PathBuf {
        self.stage_dir(stage, arch).join(format!("{stage}_test.tsv"))
    }

    pub fn model_dir(&self, stage: Stage, arch: Architecture, fold: usize) -> PathBuf {
        self.stage_dir(stage, arch).join("models").join(format!("fold{fold}"))
    }

    pub fn ensemble_dir(&self) -> PathBuf {
        self.root.join("ensemble")
    }

    pub fn ensemble_test(&self) -> PathBuf {
        self.ensemble_dir().join("ensemble_test.tsv")
    }

    pub fn postprocess_dir(&self) -> PathBuf {
        self.root.join("postprocess")
    }

    pub fn postprocessed_test(&self) -> PathBuf {
        self.postprocess_dir().join("postprocessed_test.tsv")
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.root.join("evaluation")
    }
}

/// A run directory plus its effective configuration.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub layout: RunLayout,
    pub config: PipelineConfig,
}

impl RunContext {
    /// Layers `<run>/config.toml` (when present), then `files`, then
    /// `overrides` over the defaults.
    pub fn open(run_dir: &Path, files: &[PathBuf], overrides: &[String]) -> Result<Self> {
        let layout = RunLayout::new(run_dir);
        let mut all = Vec::new();
        if layout.config().exists() {
            all.push(layout.config());
        }
        all.extend_from_slice(files);
        Ok(RunContext {
            config: PipelineConfig::load(&all, overrides)?,
            layout,
        })
    }

    pub fn with_config(run_dir: &Path, config: PipelineConfig) -> Self {
        RunContext {
            layout: RunLayout::new(run_dir),
            config,
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn record_output(manifest: &mut RunManifest, base: &Path, path: &Path) -> Result<()> {
    let name = path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/");
    manifest.outputs.insert(name, sha256_file(path)?);
    Ok(())
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Write a synthetic corpus and point `<run>/config.toml`'s `[data]` keys at it.
pub fn synthesize_corpus(ctx: &RunContext, out: Option<&Path>) -> Result<(PathBuf, CorpusSummary)> {
    let dir = out.map_or_else(|| ctx.layout.corpus_dir(), Path::to_path_buf);
    let s = &ctx.config.synth;
    let summary = write_synthetic_corpus(&dir, &s.train, s.n_test, s.n_external)?;

    let cfg_path = ctx.layout.config();
    let mut table: toml::Table = if cfg_path.exists() {
        read_file(&cfg_path)?
            .parse()
            .map_err(|e| Error::config(format!("{}: {e}", cfg_path.display())))?
    } else {
        toml::Table::new()
    };
    let data = table
        .entry("data")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("{}: `data` is not a table", cfg_path.display())))?;
    let abs = absolute(&dir);
    for (key, file) in [("train", "train.tsv"), ("test", "test.tsv"), ("gold", "test_gold.tsv"), ("external", "external.tsv")] {
        data.insert(key.into(), toml::Value::String(path_string(&abs.join(file))));
    }
    write_file(&cfg_path, &toml::to_string(&table).expect("table serializes"))?;
    Ok((dir, summary))
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub plan: FoldPlan,
    pub max_deviation: f64,
    pub path: PathBuf,
}

/// Stratified fold plan for the labeled corpus, with a balance report.
pub fn split(ctx: &RunContext, k: Option<usize>) -> Result<SplitOutcome> {
    let cfg = &ctx.config;
    let train_path = cfg.require("train")?;
    let k = k.unwrap_or(cfg.train.k_folds);
    let mut manifest = RunManifest::new("split", cfg.to_json());
    manifest.inputs.insert("train".into(), path_string(train_path));
    manifest.decisions.push(format!(
        "fold assignment: iterative stratification, best of {} seeded passes",
        crate::split::RESTARTS
    ));

    let dataset = load_main_corpus(train_path, true)?;
    let plan = stratified_kfold(&dataset, k, cfg.train.seed)?;
    let report = fold_balance_report(&plan, &dataset)?;
    let dir = ctx.layout.split_dir();
    let path = ctx.layout.folds();
    plan.write(&path)?;
    write_file(&dir.join("fold_balance.txt"), &report.to_string())?;
    write_file(&dir.join("fold_balance.tsv"), &report.to_tsv())?;
    manifest.fold_plan_hash = Some(plan.hash());
    for p in [&path, &dir.join("fold_balance.tsv")] {
        record_output(&mut manifest, &dir, p)?;
    }
    manifest.status = RunStatus::Finished;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(SplitOutcome {
        max_deviation: report.max_deviation,
        plan,
        path,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

fn offense_filter(cfg: &PipelineConfig) -> OffenseFilter {
    let mut f = OffenseFilter::default();
    if !cfg.data.keep_levels.is_empty() {
        f.keep = cfg.data.keep_levels.clone();
    }
    if !cfg.data.drop_levels.is_empty() {
        f.drop = cfg.data.drop_levels.clone();
    }
    f
}

/// k-fold training for one stage and architecture. Inputs are all loaded
/// and checked before any training starts.
pub fn train(ctx: &RunContext, stage: Stage, arch: Architecture) -> Result<TrainOutcome> {
    let cfg = &ctx.config;
    let train_path = cfg.require("train")?.to_path_buf();
    let external_path = match stage {
        Stage::SingleTask => Some(cfg.require("external")?.to_path_buf()),
        Stage::MultiTask => None,
    };
    let folds_path = ctx.layout.folds();
    if !folds_path.exists() {
        return Err(Error::config(format!(
            "fold plan {} not found; run `split` first",
            folds_path.display()
        )));
    }
    let plan = FoldPlan::read(&folds_path, cfg.train.seed)?;
    let dir = ctx.layout.stage_dir(stage, arch);

    let mut manifest = RunManifest::new("train", cfg.to_json());
    manifest.stage = Some(stage.number());
    manifest.architecture = Some(arch);
    manifest.fold_plan_hash = Some(plan.hash());
    manifest.decisions = training_decisions(&cfg.train, stage);
    manifest.inputs.insert("train".into(), path_string(&train_path));
    manifest.inputs.insert("folds".into(), path_string(&folds_path));
    if let Some(p) = &external_path {
        manifest.inputs.insert("external".into(), path_string(p));
    }
    if let Some(p) = &cfg.data.test {
        manifest.inputs.insert("test".into(), path_string(p));
    }

    EncoderRegistry::from_config(&cfg.encoders)?;
    let size = cfg.train.image_size;
    let train_set = PreparedSet::load(&load_main_corpus(&train_path, true)?, size)?;
    plan.check_covers(&train_set.dataset)?;
    let test_set = match &cfg.data.test {
        Some(p) => Some(PreparedSet::load(&load_main_corpus(p, false)?, size)?),
        None => None,
    };
    let external = match &external_path {
        Some(p) => {
            let load = load_external_negatives(p, &offense_filter(cfg))?;
            write_file(&dir.join("external_rejects.txt"), &load.rejects_report())?;
            manifest.decisions.push(format!(
                "external pool: {} kept, {} dropped by offense level, {} rejected",
                load.dataset.len(),
                load.dropped,
                load.rejects.len()
            ));
            Some(PreparedSet::load(&load.dataset, size)?)
        }
        None => None,
    };
    manifest.write(&dir.join("manifest.json"))?;

    let spec = StageSpec {
        arch,
        model: &cfg.model,
        encoders: &cfg.encoders,
        train: &cfg.train,
    };
    let out = match &external {
        Some(ext) => train_stage2(&train_set, ext, test_set.as_ref(), &plan, &spec)?,
        None => train_stage1(&train_set, test_set.as_ref(), &plan, &spec)?,
    };

    let oof_path = ctx.layout.stage_oof(stage, arch);
    out.oof.write(&oof_path)?;
    record_output(&mut manifest, &dir, &oof_path)?;
    if let Some(test) = &out.test {
        let p = ctx.layout.stage_test(stage, arch);
        test.write(&p)?;
        record_output(&mut manifest, &dir, &p)?;
    }
    for (fold, model) in out.models.iter().enumerate() {
        let mdir = ctx.layout.model_dir(stage, arch, fold);
        let mut ck = model.checkpoint();
        ck.meta.insert("fold".into(), fold.into());
        ck.save(&mdir)?;
        record_output(&mut manifest, &dir, &mdir.join("tensors.bin"))?;
    }
    manifest.folds = out.folds;
    manifest.status = RunStatus::Finished;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(TrainOutcome { dir, manifest })
}

/// Re-run a training command from its manifest alone: same configuration,
/// stage and architecture, writing into the same run directory.
pub fn train_from_manifest(manifest_path: &Path) -> Result<TrainOutcome> {
    let m = RunManifest::read(manifest_path)?;
    if m.command != "train" {
        return Err(Error::config(format!("{} is a `{}` manifest", manifest_path.display(), m.command)));
    }
    let stage = Stage::from_number(m.stage.ok_or_else(|| Error::config("manifest has no stage"))?)?;
    let arch = m.architecture.ok_or_else(|| Error::config("manifest has no architecture"))?;
    let cfg = PipelineConfig::from_json(&m.config)?;
    // <run>/stage<n>/<arch>/manifest.json
    let run_dir = manifest_path
        .parent()
        .and_then(Path::parent)
        .and_then(Path::parent)
        .ok_or_else(|| Error::config("manifest is not inside a run directory"))?;
    let folds = PathBuf::from(
        m.inputs
            .get("folds")
            .ok_or_else(|| Error::config("manifest records no fold plan"))?,
    );
    let ctx = RunContext::with_config(run_dir, cfg);
    if ctx.layout.folds() != folds {
        return Err(Error::config(format!(
            "manifest fold plan {} is not this run's {}",
            folds.display(),
            ctx.layout.folds().display()
        )));
    }
    let plan = FoldPlan::read(&folds, ctx.config.train.seed)?;
    if m.fold_plan_hash.as_deref() != Some(plan.hash().as_str()) {
        return Err(Error::config("fold plan changed since the manifest was written"));
    }
    train(&ctx, stage, arch)
}

/// Load the fold models saved by `train`.
pub fn load_models(ctx: &RunContext, stage: Stage, arch: Architecture) -> Result<(Vec<FusionModel>, PipelineConfig)> {
    let dir = ctx.layout.stage_dir(stage, arch);
    let m = RunManifest::read(&dir.join("manifest.json"))?;
    if m.status != RunStatus::Finished {
        return Err(Error::config(format!("training in {} did not finish", dir.display())));
    }
    let cfg = PipelineConfig::from_json(&m.config)?;
    let registry = EncoderRegistry::from_config(&cfg.encoders)?;
    let mut models = Vec::new();
    for fold in 0.. {
        let mdir = ctx.layout.model_dir(stage, arch, fold);
        if !mdir.exists() {
            break;
        }
        let mut model_cfg = cfg.model.clone();
        model_cfg.init_seed = seed::derive(cfg.model.init_seed, "fold-init", &[stage.number() as u64, fold as u64]);
        let mut model = FusionModel::build(arch, &model_cfg, &cfg.encoders, &registry, stage.tasks())?;
        model.restore(&Checkpoint::load(&mdir)?)?;
        models.push(model);
    }
    if models.is_empty() {
        return Err(Error::config(format!("no fold models under {}", dir.display())));
    }
    Ok((models, cfg))
}

/// Predict a corpus with saved fold models.
pub fn predict(
    ctx: &RunContext,
    stage: Stage,
    arch: Architecture,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let (models, train_cfg) = load_models(ctx, stage, arch)?;
    let input = match input {
        Some(p) => p.to_path_buf(),
        None => ctx.config.require("test")?.to_path_buf(),
    };
    let set = PreparedSet::load(&load_main_corpus(&input, false)?, train_cfg.train.image_size)?;
    let preds = predict_test(&models, &set, &train_cfg.train)?;
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
            ctx.layout.stage_dir(stage, arch).join(format!("predict_{stem}.tsv"))
        }
    };
    preds.write(&out)?;
    Ok(out)
}

/// Weighted ensemble of two prediction files, sorted by id. Defaults to the
/// Stage-1 single-flow (`y1`) and double-tower (`y2`) test predictions.
pub fn ensemble(ctx: &RunContext, y1: Option<&Path>, y2: Option<&Path>, alpha: Option<f64>, out: Option<&Path>) -> Result<PathBuf> {
    let y1 = y1.map_or_else(|| ctx.layout.stage_test(Stage::MultiTask, Architecture::SingleFlow), Path::to_path_buf);
    let y2 = y2.map_or_else(|| ctx.layout.stage_test(Stage::MultiTask, Architecture::DoubleTower), Path::to_path_buf);
    let alpha = alpha.unwrap_or(ctx.config.ensemble.alpha);
    let a = PredictionMatrix::read(&y1)?.sorted_by_id();
    let b = PredictionMatrix::read(&y2)?.sorted_by_id();
    let merged = combine(&a, &b, alpha)?;

    let out = out.map_or_else(|| ctx.layout.ensemble_test(), Path::to_path_buf);
    let dir = out.parent().map_or_else(|| ctx.layout.ensemble_dir(), Path::to_path_buf);
    merged.write(&out)?;
    let mut cfg = ctx.config.clone();
    cfg.ensemble.alpha = alpha;
    let mut manifest = RunManifest::new("ensemble", cfg.to_json());
    manifest.inputs.insert("y1".into(), path_string(&y1));
    manifest.inputs.insert("y2".into(), path_string(&y2));
    manifest.decisions.push(format!("alpha = {alpha} on y1, {} on y2", 1.0 - alpha));
    record_output(&mut manifest, &dir, &out)?;
    manifest.status = RunStatus::Finished;
    manifest.write(&dir.join("ensemble_manifest.json"))?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PostprocessOutcome {
    pub postprocessed: PathBuf,
    pub submission_a: PathBuf,
    pub submission_b: PathBuf,
}

/// Hierarchy correction of the Sub-task B matrix with the Stage-2 misogyny
/// predictions, then binary submissions for both sub-tasks.
pub fn postprocess(ctx: &RunContext, subtask_b: Option<&Path>, misogyny: Option<&Path>, out_dir: Option<&Path>) -> Result<PostprocessOutcome> {
    let pp = &ctx.config.postprocess;
    let b_path = subtask_b.map_or_else(|| ctx.layout.ensemble_test(), Path::to_path_buf);
    let m_path = misogyny.map_or_else(|| ctx.layout.stage_test(Stage::SingleTask, pp.stage2_arch), Path::to_path_buf);
    let b = PredictionMatrix::read(&b_path)?.sorted_by_id();
    let m = PredictionMatrix::read(&m_path)?.sorted_by_id();
    let corrected = hierarchy_postprocess(&b, &m, pp.threshold, pp.replace_misogynous)?;
    let sub_a = binarize(&m.select(&[Task::Misogynous])?, pp.threshold);
    let sub_b = binarize(&corrected, pp.threshold);

    let dir = out_dir.map_or_else(|| ctx.layout.postprocess_dir(), Path::to_path_buf);
    let outcome = PostprocessOutcome {
        postprocessed: dir.join("postprocessed_test.tsv"),
        submission_a: dir.join("submission_a.tsv"),
        submission_b: dir.join("submission_b.tsv"),
    };
    corrected.write(&outcome.postprocessed)?;
    sub_a.write(&outcome.submission_a)?;
    sub_b.write(&outcome.submission_b)?;

    let mut manifest = RunManifest::new("postprocess", ctx.config.to_json());
    manifest.inputs.insert("subtask_b".into(), path_string(&b_path));
    manifest.inputs.insert("misogyny".into(), path_string(&m_path));
    manifest.decisions.push(format!("binarization threshold {} (value >= threshold is positive)", pp.threshold));
    manifest.decisions.push(format!(
        "misogynous column replaced by the Stage-2 prediction: {}",
        pp.replace_misogynous
    ));
    manifest.decisions.push("Sub-task A submission = Stage-2 misogyny prediction".into());
    for p in [&outcome.postprocessed, &outcome.submission_a, &outcome.submission_b] {
        record_output(&mut manifest, &dir, p)?;
    }
    manifest.status = RunStatus::Finished;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub rows: Vec<ResultRow>,
    pub report_txt: PathBuf,
    pub report_tsv: PathBuf,
}

fn gold_labels(path: &Path) -> Result<Vec<(String, LabelVector)>> {
    let ds: Dataset = load_main_corpus(path, true)?;
    Ok(ds
        .samples
        .into_iter()
        .map(|s| (s.id, s.labels.expect("labeled corpus")))
        .collect())
}

/// Score prediction files against gold labels. With no `preds` the
/// results-table rows of the pipeline are scored from the run directory:
/// prevalence baseline, single-flow, double-tower, ensemble and
/// post-processed predictions.
pub fn evaluate(ctx: &RunContext, preds: &[(String, PathBuf)], gold: Option<&Path>, out_dir: Option<&Path>) -> Result<EvaluateOutcome> {
    let cfg = &ctx.config;
    let gold_path = match gold {
        Some(p) => p.to_path_buf(),
        None => cfg.require("gold")?.to_path_buf(),
    };
    let gold = gold_labels(&gold_path)?;
    let dir = out_dir.map_or_else(|| ctx.layout.evaluation_dir(), Path::to_path_buf);

    let mut entries: Vec<(String, PathBuf)> = preds.to_vec();
    let mut missing = Vec::new();
    if entries.is_empty() {
        let train = load_main_corpus(cfg.require("train")?, true)?;
        let ids: Vec<String> = gold.iter().map(|(id, _)| id.clone()).collect();
        let baseline = dir.join("baseline_test.tsv");
        prevalence_baseline(&train, &ids)?.write(&baseline)?;
        entries.push(("organizers baseline".into(), baseline));
        for (name, path) in [
            ("single-flow", ctx.layout.stage_test(Stage::MultiTask, Architecture::SingleFlow)),
            ("double-tower", ctx.layout.stage_test(Stage::MultiTask, Architecture::DoubleTower)),
            ("ensemble", ctx.layout.ensemble_test()),
            ("post-processing", ctx.layout.postprocessed_test()),
        ] {
            if path.exists() {
                entries.push((name.into(), path));
            } else {
                log::warn!("{name}: {} not found, row skipped", path.display());
                missing.push(name);
            }
        }
    }

    let mode = cfg.eval.primary;
    let mut rows = Vec::new();
    let mut details = String::new();
    let mut manifest = RunManifest::new("evaluate", cfg.to_json());
    manifest.inputs.insert("gold".into(), path_string(&gold_path));
    for (name, path) in &entries {
        let pred = PredictionMatrix::read(path)?;
        let e = score(&pred, &gold, cfg.eval.threshold)?;
        rows.push(ResultRow {
            method: name.clone(),
            subtask_a: e.subtask_a,
            subtask_b: e.subtask_b_score(mode),
        });
        details.push_str(&format!("== {name} ({})\n{}\n", path.display(), e.render(mode)));
        manifest.inputs.insert(name.clone(), path_string(path));
    }

    let mut text = results_table(&rows);
    text.push_str(&format!(
        "\nSub-task A: binary macro-F1 of the misogynous column. Sub-task B: {} F1 over five labels.\n",
        match mode {
            crate::metrics::F1Mode::Macro => "macro",
            crate::metrics::F1Mode::Weighted => "weighted",
        }
    ));
    text.push_str(&format!("Threshold {}. {ZERO_DIVISION_NOTE}\n", cfg.eval.threshold));
    for name in &missing {
        text.push_str(&format!("not available: {name}\n"));
    }
    text.push('\n');
    text.push_str(&details);

    let outcome = EvaluateOutcome {
        rows,
        report_txt: dir.join("report.txt"),
        report_tsv: dir.join("report.tsv"),
    };
    write_file(&outcome.report_txt, &text)?;
    write_file(&outcome.report_tsv, &results_tsv(&outcome.rows))?;
    for p in [&outcome.report_txt, &outcome.report_tsv] {
        record_output(&mut manifest, &dir, p)?;
    }
    manifest.decisions.push(format!("primary Sub-task B average: {mode:?}").to_lowercase());
    manifest.status = RunStatus::Finished;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(outcome)
}

/// Digest of every file under `dir`, keyed by relative path.
pub fn digest_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}
