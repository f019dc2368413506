use crate::autograd::{Graph, ParamGroup, ParamStore, Var};
use crate::encoders::{EncoderConfig, EncoderRegistry, ImageBackbone, TextEncoder};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::labels::Task;
use crate::seed;
use crate::tensor::Matrix;

use super::layers::{dropout_mask, Dense};
use super::{HeadConfig, Mode, ModelConfig};

/// Text tower and image tower joined by an MLP:
/// `logits = MLP(concat(text pooled, image feature))`.
#[derive(Debug, Clone)]
pub struct DoubleTower {
    pub store: ParamStore,
    pub heads: HeadConfig,
    pub text: TextEncoder,
    pub image: ImageBackbone,
    pub hidden: Vec<Dense>,
    pub output: Dense,
    pub dropout: f64,
    pub max_text_len: usize,
    pub flatten: bool,
}

impl DoubleTower {
    pub fn build(cfg: &ModelConfig, encoders: &EncoderConfig, registry: &EncoderRegistry, heads: HeadConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Construction(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        if heads.hidden_dims.contains(&0) {
            return Err(Error::Construction("MLP hidden sizes must be positive".into()));
        }
        let mut store = ParamStore::new();
        let text = TextEncoder::build(registry.text_spec(&encoders.text)?, &mut store, ParamGroup::Text, "text");

        let spec = registry.image_spec(&encoders.image)?.clone();
        let image = ImageBackbone::build(&spec, &mut store, ParamGroup::Image, "image", true)?;
        let (w, b) = registry.image_weights(&encoders.image)?;
        *store.value_mut(image.weight) = w;
        *store.value_mut(image.bias) = b;

        let mut rng = seed::rng(cfg.init_seed, "double-tower", &[]);
        let flatten = cfg.flatten_tasks;
        let mut width = text.dim() + image.dim() + if flatten { Task::ALL.len() } else { 0 };
        let mut hidden = Vec::new();
        for (i, &d) in heads.hidden_dims.iter().enumerate() {
            hidden.push(Dense::new(&mut store, &format!("mlp.{i}"), ParamGroup::Fusion, width, d, &mut rng));
            width = d;
        }
        let out_width = if flatten { 1 } else { heads.tasks().len() };
        let output = Dense::new(&mut store, "mlp.out", ParamGroup::Fusion, width, out_width, &mut rng);
        Ok(DoubleTower {
            store,
            heads,
            text,
            image,
            hidden,
            output,
            dropout: cfg.dropout,
            max_text_len: cfg.max_text_len,
            flatten,
        })
    }

    /// The fused input row fed to the MLP.
    pub fn fused_input(&self, g: &mut Graph, text: &str, img: &ImageTensor, task: Option<Task>) -> Result<Var> {
        let ids = self.text.token_ids(text, self.max_text_len);
        let (_, pooled) = self.text.forward(g, &ids);
        let feat = self.image.forward(g, img);
        let mut parts = vec![pooled, feat];
        if self.flatten {
            let task = task.ok_or_else(|| Error::argument("flattened model needs a task"))?;
            let mut onehot = vec![0.0; Task::ALL.len()];
            onehot[task.index()] = 1.0;
            parts.push(g.constant(Matrix::row_vector(onehot)));
        }
        Ok(g.concat_cols(&parts))
    }

    pub fn forward(&self, g: &mut Graph, text: &str, img: &ImageTensor, mode: &mut Mode<'_>, task: Option<Task>) -> Result<Var> {
        let mut h = self.fused_input(g, text, img, task)?;
        for layer in &self.hidden {
            let z = layer.forward(g, h);
            h = g.tanh(z);
            if let Mode::Train { dropout_rng } = mode {
                if self.dropout > 0.0 {
                    let cols = g.value(h).cols();
                    let mask = dropout_mask(&mut **dropout_rng, 1, cols, self.dropout);
                    h = g.mul_const(h, mask);
                }
            }
        }
        Ok(self.output.forward(g, h))
    }
}
