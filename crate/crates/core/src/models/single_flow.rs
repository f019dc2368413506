use rand::Rng;

use crate::autograd::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::encoders::{EncoderConfig, EncoderRegistry, ImageBackbone, TextEncoderSpec, Tokenizer, toy_embedding_table};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::labels::Task;
use crate::seed;
use crate::tensor::Matrix;

use super::layers::{Dense, LayerNorm};
use super::{HeadConfig, Mode, ModelConfig};

const TEXT_SEGMENT: usize = 0;
const IMAGE_SEGMENT: usize = 1;

#[derive(Debug, Clone)]
struct EncoderLayer {
    query: Dense,
    key: Dense,
    value: Dense,
    attn_out: Dense,
    attn_norm: LayerNorm,
    ffn_in: Dense,
    ffn_out: Dense,
    ffn_norm: LayerNorm,
}

/// Single-stream transformer over `[CLS] + text tokens + visual tokens`.
///
/// Text tokens get position and segment-0 embeddings; each image backbone
/// contributes one visual token, projected to the model width, with the
/// segment-1 embedding and one shared visual position embedding. Logits come
/// from the first position.
#[derive(Debug, Clone)]
pub struct SingleFlow {
    pub store: ParamStore,
    pub heads: HeadConfig,
    pub tokenizer: Tokenizer,
    pub backbones: Vec<ImageBackbone>,
    token_table: ParamId,
    cls: ParamId,
    positions: ParamId,
    segments: ParamId,
    visual_position: ParamId,
    task_table: Option<ParamId>,
    projections: Vec<Dense>,
    embed_norm: LayerNorm,
    layers: Vec<EncoderLayer>,
    head_hidden: Vec<Dense>,
    output: Dense,
    width: usize,
    num_heads: usize,
    pub max_text_len: usize,
    pub max_seq_len: usize,
    pub flatten: bool,
}

impl SingleFlow {
    pub fn build(cfg: &ModelConfig, encoders: &EncoderConfig, registry: &EncoderRegistry, heads: HeadConfig) -> Result<Self> {
        if cfg.width == 0 || cfg.heads == 0 || !cfg.width.is_multiple_of(cfg.heads) {
            return Err(Error::Construction(format!(
                "width {} must be a positive multiple of heads {}",
                cfg.width, cfg.heads
            )));
        }
        if encoders.single_flow_backbones.is_empty() {
            return Err(Error::Construction("single-flow model needs at least one image backbone".into()));
        }
        let width = cfg.width;
        let joint = ParamGroup::Joint;
        let mut store = ParamStore::new();
        let mut rng = seed::rng(cfg.init_seed, "single-flow", &[]);
        let small = |rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-0.05..0.05))
        };

        let text_spec = TextEncoderSpec {
            dim: width,
            ..registry.text_spec(&encoders.text)?.clone()
        };
        let token_table = store.add("embed.tokens", joint, toy_embedding_table(&text_spec), true);
        let cls = store.add("embed.cls", joint, small(1, width, &mut rng), true);
        let positions = store.add("embed.positions", joint, small(cfg.max_text_len, width, &mut rng), true);
        let segments = store.add("embed.segments", joint, small(2, width, &mut rng), true);
        let visual_position = store.add("embed.visual_position", joint, small(1, width, &mut rng), true);
        let task_table = cfg
            .flatten_tasks
            .then(|| store.add("embed.tasks", joint, small(Task::ALL.len(), width, &mut rng), true));

        let mut backbones = Vec::new();
        let mut projections = Vec::new();
        for (i, id) in encoders.single_flow_backbones.iter().enumerate() {
            let spec = registry.image_spec(id)?.clone();
            let group = if cfg.train_backbones { joint } else { ParamGroup::Image };
            let b = ImageBackbone::build(&spec, &mut store, group, &format!("backbone.{i}.{id}"), cfg.train_backbones)?;
            let (w, bias) = registry.image_weights(id)?;
            *store.value_mut(b.weight) = w;
            *store.value_mut(b.bias) = bias;
            projections.push(Dense::new(&mut store, &format!("visual_proj.{i}"), joint, spec.dim, width, &mut rng));
            backbones.push(b);
        }
        let embed_norm = LayerNorm::new(&mut store, "embed.norm", joint, width);

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("layer.{l}");
            layers.push(EncoderLayer {
                query: Dense::new(&mut store, &format!("{p}.query"), joint, width, width, &mut rng),
                key: Dense::new(&mut store, &format!("{p}.key"), joint, width, width, &mut rng),
                value: Dense::new(&mut store, &format!("{p}.value"), joint, width, width, &mut rng),
                attn_out: Dense::new(&mut store, &format!("{p}.attn_out"), joint, width, width, &mut rng),
                attn_norm: LayerNorm::new(&mut store, &format!("{p}.attn_norm"), joint, width),
                ffn_in: Dense::new(&mut store, &format!("{p}.ffn_in"), joint, width, cfg.ffn_dim, &mut rng),
                ffn_out: Dense::new(&mut store, &format!("{p}.ffn_out"), joint, cfg.ffn_dim, width, &mut rng),
                ffn_norm: LayerNorm::new(&mut store, &format!("{p}.ffn_norm"), joint, width),
            });
        }

        let mut head_hidden = Vec::new();
        let mut w = width;
        for (i, &d) in heads.hidden_dims.iter().enumerate() {
            head_hidden.push(Dense::new(&mut store, &format!("head.{i}"), joint, w, d, &mut rng));
            w = d;
        }
        let out_width = if cfg.flatten_tasks { 1 } else { heads.tasks().len() };
        let output = Dense::new(&mut store, "head.out", joint, w, out_width, &mut rng);

        let n_visual = backbones.len();
        Ok(SingleFlow {
            store,
            heads,
            tokenizer: Tokenizer {
                vocab_size: text_spec.vocab_size,
            },
            backbones,
            token_table,
            cls,
            positions,
            segments,
            visual_position,
            task_table,
            projections,
            embed_norm,
            layers,
            head_hidden,
            output,
            width,
            num_heads: cfg.heads,
            max_text_len: cfg.max_text_len,
            max_seq_len: if cfg.max_seq_len == 0 {
                1 + cfg.max_text_len + n_visual
            } else {
                cfg.max_seq_len
            },
            flatten: cfg.flatten_tasks,
        })
    }

    /// Number of positions the input will occupy: `1 + text tokens + backbones`.
    pub fn sequence_len(&self, text: &str) -> usize {
        1 + self.tokenizer.encode(text, self.max_text_len).len() + self.backbones.len()
    }

    /// Embedded input sequence, `len × width`, before the transformer.
    pub fn embed(&self, g: &mut Graph, text: &str, img: &ImageTensor, task: Option<Task>) -> Result<Var> {
        let ids = self.tokenizer.encode(text, self.max_text_len);
        let seq_len = 1 + ids.len() + self.backbones.len();
        if seq_len > self.max_seq_len {
            return Err(Error::argument(format!(
                "sequence length {seq_len} exceeds model maximum {}",
                self.max_seq_len
            )));
        }
        let text_segment = g.gather(self.segments, &[TEXT_SEGMENT]);
        let image_segment = g.gather(self.segments, &[IMAGE_SEGMENT]);

        let mut cls = g.param(self.cls);
        cls = g.add(cls, text_segment);
        if self.flatten {
            let task = task.ok_or_else(|| Error::argument("flattened model needs a task"))?;
            let table = self.task_table.expect("flattened model has a task table");
            let t = g.gather(table, &[task.index()]);
            cls = g.add(cls, t);
        }

        let tokens = g.gather(self.token_table, &ids);
        let pos_idx: Vec<usize> = (0..ids.len()).collect();
        let pos = g.gather(self.positions, &pos_idx);
        let text_rows = g.add(tokens, pos);
        let text_rows = g.add_row(text_rows, text_segment);

        let mut rows = vec![cls, text_rows];
        let visual_pos = g.param(self.visual_position);
        for (backbone, proj) in self.backbones.iter().zip(&self.projections) {
            let feat = backbone.forward(g, img);
            let v = proj.forward(g, feat);
            let v = g.add(v, visual_pos);
            rows.push(g.add(v, image_segment));
        }
        let seq = g.concat_rows(&rows);
        Ok(self.embed_norm.forward(g, seq))
    }

    fn attention(&self, g: &mut Graph, layer: &EncoderLayer, x: Var) -> Var {
        let q = layer.query.forward(g, x);
        let k = layer.key.forward(g, x);
        let v = layer.value.forward(g, x);
        let head_dim = self.width / self.num_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim);
            let kh = g.slice_cols(k, h * head_dim, head_dim);
            let vh = g.slice_cols(v, h * head_dim, head_dim);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores);
            outs.push(g.matmul(weights, vh));
        }
        let merged = g.concat_cols(&outs);
        layer.attn_out.forward(g, merged)
    }

    pub fn forward(&self, g: &mut Graph, text: &str, img: &ImageTensor, _mode: &mut Mode<'_>, task: Option<Task>) -> Result<Var> {
        let mut x = self.embed(g, text, img, task)?;
        for layer in &self.layers {
            let a = self.attention(g, layer, x);
            let r = g.add(x, a);
            let h = layer.attn_norm.forward(g, r);
            let f = layer.ffn_in.forward(g, h);
            let f = g.gelu(f);
            let f = layer.ffn_out.forward(g, f);
            let r = g.add(h, f);
            x = layer.ffn_norm.forward(g, r);
        }
        let mut h = g.slice_rows(x, 0, 1);
        for layer in &self.head_hidden {
            let z = layer.forward(g, h);
            h = g.tanh(z);
        }
        Ok(self.output.forward(g, h))
    }
}
