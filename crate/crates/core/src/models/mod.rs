//! The two classifier architectures.
//!
//! * [`DoubleTower`]: independent text and image encoders whose outputs are
//!   concatenated and fed to an MLP with one logit per task.
//! * [`SingleFlow`]: one transformer stack over `[CLS] + text tokens +
//!   one projected token per image backbone`, classified from position 0.

mod double_tower;
mod layers;
mod single_flow;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use double_tower::DoubleTower;
pub use layers::Dense;
pub use single_flow::SingleFlow;

use crate::autograd::{sigmoid, Gradients, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::checkpoint::Checkpoint;
use crate::encoders::{EncoderConfig, EncoderRegistry, MAX_TEXT_LEN};
use crate::error::{Error, Result};
use crate::image::{five_crop, tta_average, ImageTensor};
use crate::labels::{canonical_tasks, LabelVector, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    DoubleTower,
    SingleFlow,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::DoubleTower => "double_tower",
            Architecture::SingleFlow => "single_flow",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "double_tower" => Ok(Architecture::DoubleTower),
            "single_flow" => Ok(Architecture::SingleFlow),
            other => Err(Error::argument(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Which tasks get a logit, and the hidden sizes of the classifier MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    tasks: Vec<Task>,
    pub hidden_dims: Vec<usize>,
}

impl HeadConfig {
    pub fn new(tasks: &[Task], hidden_dims: Vec<usize>) -> Result<Self> {
        Ok(HeadConfig {
            tasks: canonical_tasks(tasks)?,
            hidden_dims,
        })
    }

    pub fn all_tasks(hidden_dims: Vec<usize>) -> Self {
        HeadConfig {
            tasks: Task::ALL.to_vec(),
            hidden_dims,
        }
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }
}

/// Pre-sigmoid outputs, one per task.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub tasks: Vec<Task>,
    pub values: Vec<f64>,
}

impl Logits {
    pub fn probabilities(&self) -> Vec<f64> {
        self.values.iter().map(|&z| sigmoid(z)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Double-tower fusion MLP hidden sizes.
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
    /// Single-flow geometry.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Hidden sizes of the single-flow classification head.
    pub head_hidden: Vec<usize>,
    pub max_text_len: usize,
    /// Upper bound on the single-flow sequence; 0 means `1 + max_text_len + backbones`.
    pub max_seq_len: usize,
    /// Fine-tune the single-flow image backbones (frozen by default).
    pub train_backbones: bool,
    /// Treat the five tasks as one binary problem conditioned on a task indicator.
    pub flatten_tasks: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mlp_hidden: vec![256, 64],
            dropout: 0.2,
            width: 128,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            head_hidden: Vec::new(),
            max_text_len: MAX_TEXT_LEN,
            max_seq_len: 0,
            train_backbones: false,
            flatten_tasks: false,
            init_seed: 17,
        }
    }
}

/// Train-mode switches for one forward pass.
pub enum Mode<'r> {
    Eval,
    Train { dropout_rng: &'r mut dyn RngCore },
}

#[derive(Debug, Clone)]
pub enum FusionModel {
    DoubleTower(DoubleTower),
    SingleFlow(SingleFlow),
}

impl FusionModel {
    pub fn build(
        arch: Architecture,
        cfg: &ModelConfig,
        encoders: &EncoderConfig,
        registry: &EncoderRegistry,
        tasks: &[Task],
    ) -> Result<Self> {
        Ok(match arch {
            Architecture::DoubleTower => {
                let heads = HeadConfig::new(tasks, cfg.mlp_hidden.clone())?;
                FusionModel::DoubleTower(DoubleTower::build(cfg, encoders, registry, heads)?)
            }
            Architecture::SingleFlow => {
                let heads = HeadConfig::new(tasks, cfg.head_hidden.clone())?;
                FusionModel::SingleFlow(SingleFlow::build(cfg, encoders, registry, heads)?)
            }
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            FusionModel::DoubleTower(_) => Architecture::DoubleTower,
            FusionModel::SingleFlow(_) => Architecture::SingleFlow,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            FusionModel::DoubleTower(m) => &m.store,
            FusionModel::SingleFlow(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            FusionModel::DoubleTower(m) => &mut m.store,
            FusionModel::SingleFlow(m) => &mut m.store,
        }
    }

    pub fn heads(&self) -> &HeadConfig {
        match self {
            FusionModel::DoubleTower(m) => &m.heads,
            FusionModel::SingleFlow(m) => &m.heads,
        }
    }

    pub fn tasks(&self) -> &[Task] {
        self.heads().tasks()
    }

    pub fn is_flattened(&self) -> bool {
        match self {
            FusionModel::DoubleTower(m) => m.flatten,
            FusionModel::SingleFlow(m) => m.flatten,
        }
    }

    /// Record one forward pass; returns a `1 × width` logit row. With
    /// flattened tasks `task` selects the conditioning and the row has width 1.
    pub fn forward(
        &self,
        g: &mut Graph,
        text: &str,
        img: &ImageTensor,
        mode: &mut Mode<'_>,
        task: Option<Task>,
    ) -> Result<Var> {
        match self {
            FusionModel::DoubleTower(m) => m.forward(g, text, img, mode, task),
            FusionModel::SingleFlow(m) => m.forward(g, text, img, mode, task),
        }
    }

    /// Evaluation-mode logits, one per task.
    pub fn logits(&self, text: &str, img: &ImageTensor) -> Result<Logits> {
        let tasks = self.tasks().to_vec();
        let mut values = Vec::with_capacity(tasks.len());
        if self.is_flattened() {
            for &t in &tasks {
                let mut g = Graph::new(self.store());
                let v = self.forward(&mut g, text, img, &mut Mode::Eval, Some(t))?;
                values.push(g.value(v).get(0, 0));
            }
        } else {
            let mut g = Graph::new(self.store());
            let v = self.forward(&mut g, text, img, &mut Mode::Eval, None)?;
            values.extend_from_slice(g.value(v).data());
        }
        Ok(Logits { tasks, values })
    }

    /// Probabilities for one sample; with `tta_crop` the image is cut into
    /// five crops and the per-crop probabilities are averaged.
    pub fn predict_proba(&self, text: &str, img: &ImageTensor, tta_crop: Option<usize>) -> Result<Vec<f64>> {
        match tta_crop {
            None => Ok(self.logits(text, img)?.probabilities()),
            Some(crop) => {
                let rows = five_crop(img, crop)?
                    .iter()
                    .map(|c| self.logits(text, c).map(|l| l.probabilities()))
                    .collect::<Result<Vec<_>>>()?;
                tta_average(&rows)
            }
        }
    }

    /// Mean BCE over the model's tasks and its gradients.
    pub fn loss_and_grads(
        &self,
        text: &str,
        img: &ImageTensor,
        labels: &LabelVector,
        mode: &mut Mode<'_>,
    ) -> Result<(f64, Gradients)> {
        let tasks = self.tasks().to_vec();
        if self.is_flattened() {
            let mut total = Gradients::zeros_like(self.store());
            let mut loss = 0.0;
            for &t in &tasks {
                let mut g = Graph::new(self.store());
                let z = self.forward(&mut g, text, img, mode, Some(t))?;
                let l = g.bce_with_logits(z, &[labels.as_f64(t)]);
                loss += g.value(l).get(0, 0);
                total.accumulate(&g.backward(l));
            }
            let n = tasks.len() as f64;
            total.scale(1.0 / n);
            return Ok((loss / n, total));
        }
        let mut g = Graph::new(self.store());
        let z = self.forward(&mut g, text, img, mode, None)?;
        let targets: Vec<f64> = tasks.iter().map(|&t| labels.as_f64(t)).collect();
        let l = g.bce_with_logits(z, &targets);
        Ok((g.value(l).get(0, 0), g.backward(l)))
    }

    /// Trainable parameters partitioned by learning-rate group.
    pub fn parameter_groups(&self) -> BTreeMap<ParamGroup, Vec<ParamId>> {
        let mut groups: BTreeMap<ParamGroup, Vec<ParamId>> = BTreeMap::new();
        for (id, p) in self.store().iter().filter(|(_, p)| p.trainable) {
            groups.entry(p.group).or_default().push(id);
        }
        groups
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(self.store());
        ck.meta.insert("architecture".into(), self.architecture().name().into());
        ck.meta.insert(
            "tasks".into(),
            self.tasks().iter().map(|t| t.name()).collect::<Vec<_>>().into(),
        );
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore_into(self.store_mut())
    }
}
