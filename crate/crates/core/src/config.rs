//! Pipeline configuration: built-in defaults, then TOML files in order, then
//! `key=value` overrides with dotted keys such as `train.batch_size`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::read_file;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::F1Mode;
use crate::models::{Architecture, ModelConfig};
use crate::postprocess::{DEFAULT_ALPHA, DEFAULT_THRESHOLD};
use crate::synth::SynthConfig;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled main corpus.
    pub train: Option<PathBuf>,
    /// Unlabeled test corpus.
    pub test: Option<PathBuf>,
    /// Gold labels for the test corpus, same layout as `train`.
    pub gold: Option<PathBuf>,
    /// External offense-annotated corpus for Stage 2.
    pub external: Option<PathBuf>,
    /// Overrides for the offense-level filter; empty keeps the defaults.
    pub keep_levels: Vec<String>,
    pub drop_levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Weight of the single-flow predictions.
    pub alpha: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub threshold: f64,
    /// Put the Stage-2 misogyny probability into the misogynous column.
    pub replace_misogynous: bool,
    /// Architecture whose Stage-2 predictions drive the correction.
    pub stage2_arch: Architecture,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            threshold: DEFAULT_THRESHOLD,
            replace_misogynous: true,
            stage2_arch: Architecture::DoubleTower,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    /// Which Sub-task B average is reported as primary.
    pub primary: F1Mode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: DEFAULT_THRESHOLD,
            primary: F1Mode::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(flatten)]
    pub train: SynthConfig,
    pub n_test: usize,
    pub n_external: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train: SynthConfig::default(),
            n_test: 200,
            n_external: 300,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub encoders: EncoderConfig,
    pub train: TrainingConfig,
    pub ensemble: EnsembleConfig,
    pub postprocess: PostprocessConfig,
    pub eval: EvalConfig,
    pub synth: CorpusConfig,
}

impl PipelineConfig {
    /// Defaults, then each file in order, then each `key=value` override.
    pub fn load(files: &[PathBuf], overrides: &[String]) -> Result<Self> {
        let mut root = toml::Value::try_from(PipelineConfig::default())
            .map_err(|e| Error::Internal(format!("default config does not serialize: {e}")))?;
        for path in files {
            let layer: toml::Value = read_file(path)?
                .parse::<toml::Table>()
                .map(toml::Value::Table)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            merge(&mut root, layer);
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: PipelineConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes to JSON")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_value(value.clone()).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.ensemble.alpha) {
            return Err(Error::config(format!("ensemble.alpha {} outside [0, 1]", self.ensemble.alpha)));
        }
        for (key, t) in [("postprocess.threshold", self.postprocess.threshold), ("eval.threshold", self.eval.threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("{key} {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// The path stored under `data.<key>`, or a config error naming the key.
    /// An empty path counts as unset.
    pub fn require(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "train" => &self.data.train,
            "test" => &self.data.test,
            "gold" => &self.data.gold,
            "external" => &self.data.external,
            other => return Err(Error::Internal(format!("unknown data key `{other}`"))),
        };
        p.as_deref()
            .filter(|p| !p.as_os_str().is_empty())
            .ok_or_else(|| Error::config(format!("missing required key `data.{key}`")))
    }
}

fn merge(base: &mut toml::Value, layer: toml::Value) {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(existing) if existing.is_table() && v.is_table() => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, l) => *b = l,
    }
}

/// `section.key=value`; the value is read as a TOML literal and falls back
/// to a bare string.
fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed key `{key}`")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("`{key}` does not name a setting")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("`{key}` does not name a setting")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&d.to_toml()).unwrap(), d);
        assert_eq!(PipelineConfig::from_json(&d.to_json()).unwrap(), d);
        assert_eq!(d.train.batch_size, 64);
        assert_eq!(d.ensemble.alpha, 0.1);
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.toml");
        let b = dir.path().join("b.toml");
        std::fs::write(&a, "[train]\nbatch_size = 8\nepochs = 4\n[data]\ntrain = \"x.tsv\"\n").unwrap();
        std::fs::write(&b, "[train]\nepochs = 6\n").unwrap();
        let cfg = PipelineConfig::load(&[a, b], &["train.batch_size=2".into(), "model.dropout=0.1".into()]).unwrap();
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.epochs, 6);
        assert_eq!(cfg.model.dropout, 0.1);
        assert_eq!(cfg.train.patience, 3);
        assert_eq!(cfg.require("train").unwrap(), Path::new("x.tsv"));
        assert!(matches!(cfg.require("external"), Err(Error::Config(m)) if m.contains("data.external")));
        let cleared = PipelineConfig::load(&[], &["data.external=".into()]).unwrap();
        assert!(matches!(cleared.require("external"), Err(Error::Config(_))));
    }

    #[test]
    fn bad_overrides() {
        assert!(matches!(PipelineConfig::load(&[], &["train.nope=1".into()]), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::load(&[], &["train.batch_size".into()]), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::load(&[], &["ensemble.alpha=2".into()]), Err(Error::Config(_))));
        let cfg = PipelineConfig::load(&[], &["postprocess.stage2_arch=single_flow".into(), "eval.primary=weighted".into()]).unwrap();
        assert_eq!(cfg.postprocess.stage2_arch, Architecture::SingleFlow);
        assert_eq!(cfg.eval.primary, F1Mode::Weighted);
    }
}
