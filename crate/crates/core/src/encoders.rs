//! Text and image feature extractors behind a string-keyed registry.
//!
//! Toy encoders are seeded and deterministic so that every downstream test
//! runs without pretrained weights:
//!
//! * `toy_text`: word-level hashing tokenizer plus a seeded embedding table;
//!   the pooled vector is the mean of the unmasked token embeddings.
//! * `toy_image*`: adaptive average pooling onto a fixed grid, per-channel
//!   normalization (mean 0.5, std 0.5), `tanh`, then one linear map.
//!
//! Named backbones (`resnet18`, `resnet152`, `efficientnet_b2`,
//! `efficientnet_b4`, `efficientnet_b7`) share the pooled-linear head and
//! must be supplied as weight checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::seed;
use crate::tensor::Matrix;

pub const MAX_TEXT_LEN: usize = 64;
pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
const RESERVED_IDS: usize = 3;

pub const TOY_TEXT: &str = "toy_text";
pub const TOY_IMAGE: &str = "toy_image";
pub const PRETRAINED_BACKBONES: [&str; 5] = [
    "resnet18",
    "resnet152",
    "efficientnet_b2",
    "efficientnet_b4",
    "efficientnet_b7",
];

/// Lowercased words with punctuation split off as separate tokens.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() || c == '\'' || c == '_' {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Hashing tokenizer: `[CLS] w1 .. wn [SEP]`, truncated to `max_len` ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocab_size: usize,
}

impl Tokenizer {
    pub fn token_id(&self, word: &str) -> usize {
        RESERVED_IDS + (seed::fnv1a(word.as_bytes()) % (self.vocab_size - RESERVED_IDS) as u64) as usize
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let max_len = max_len.max(2);
        let mut ids = vec![CLS_ID];
        ids.extend(words(text).iter().take(max_len - 2).map(|w| self.token_id(w)));
        ids.push(SEP_ID);
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding {
    pub token_ids: Vec<usize>,
    pub token_embeddings: Matrix,
    pub pooled: Vec<f64>,
    pub attention_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderSpec {
    pub id: String,
    pub vocab_size: usize,
    pub dim: usize,
    pub seed: u64,
}

impl TextEncoderSpec {
    pub fn toy(dim: usize) -> Self {
        TextEncoderSpec {
            id: TOY_TEXT.into(),
            vocab_size: 4096,
            dim,
            seed: seed::fnv1a(TOY_TEXT.as_bytes()),
        }
    }
}

/// Seeded embedding table: row `i` is the embedding of token `i`.
pub fn toy_embedding_table(spec: &TextEncoderSpec) -> Matrix {
    let mut rng = seed::rng(spec.seed, "text-embedding", &[spec.vocab_size as u64, spec.dim as u64]);
    Matrix::from_fn(spec.vocab_size, spec.dim, |_, _| rng.gen_range(-1.0..1.0))
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub spec: TextEncoderSpec,
    pub tokenizer: Tokenizer,
    pub table: ParamId,
}

impl TextEncoder {
    pub fn build(spec: &TextEncoderSpec, store: &mut ParamStore, group: ParamGroup, prefix: &str) -> Self {
        let table = store.add(format!("{prefix}.embedding"), group, toy_embedding_table(spec), true);
        TextEncoder {
            spec: spec.clone(),
            tokenizer: Tokenizer {
                vocab_size: spec.vocab_size,
            },
            table,
        }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn token_ids(&self, text: &str, max_len: usize) -> Vec<usize> {
        self.tokenizer.encode(text, max_len)
    }

    /// Token embeddings (`T × dim`) and the masked-mean pooled row.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> (Var, Var) {
        let tokens = g.gather(self.table, ids);
        let mask = vec![true; ids.len()];
        let pooled = g.masked_mean_rows(tokens, &mask);
        (tokens, pooled)
    }

    pub fn encode(&self, store: &ParamStore, text: &str, max_len: usize) -> TextEncoding {
        let ids = self.token_ids(text, max_len);
        let mut g = Graph::new(store);
        let (tokens, pooled) = self.forward(&mut g, &ids);
        TextEncoding {
            attention_mask: vec![true; ids.len()],
            token_embeddings: g.value(tokens).clone(),
            pooled: g.value(pooled).data().to_vec(),
            token_ids: ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub id: String,
    pub dim: usize,
    pub grid: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl BackboneSpec {
    pub fn toy(id: &str, dim: usize) -> Self {
        BackboneSpec {
            id: id.into(),
            dim,
            grid: 8,
            seed: seed::fnv1a(id.as_bytes()),
            checkpoint: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.grid * self.grid * ImageTensor::CHANNELS
    }
}

/// One feature vector produced by a backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeature {
    pub backbone_id: String,
    pub vector: Vec<f64>,
}

const NORM_MEAN: f64 = 0.5;
const NORM_STD: f64 = 0.5;

/// Grid-pooled, normalized, `tanh`-squashed pixels: the backbone input row.
pub fn pooled_input(img: &ImageTensor, grid: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(grid * grid * 3);
    for gy in 0..grid {
        let (y0, y1) = (gy * h / grid, ((gy + 1) * h).div_ceil(grid).max(gy * h / grid + 1));
        for gx in 0..grid {
            let (x0, x1) = (gx * w / grid, ((gx + 1) * w).div_ceil(grid).max(gx * w / grid + 1));
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..3 {
                let mut sum = 0.0;
                for y in y0..y1.min(h) {
                    for x in x0..x1.min(w) {
                        sum += img.get(y, x, c);
                    }
                }
                let z = (sum / n - NORM_MEAN) / NORM_STD;
                out.push(z.tanh());
            }
        }
    }
    out
}

fn init_backbone(spec: &BackboneSpec) -> Result<(Matrix, Matrix)> {
    if let Some(path) = &spec.checkpoint {
        let ck = Checkpoint::load(path)?;
        let get = |name: &str| {
            ck.tensors
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{}: tensor `{name}` missing", path.display())))
        };
        let (w, b) = (get("weight")?, get("bias")?);
        if w.shape() != (spec.input_dim(), spec.dim) || b.shape() != (1, spec.dim) {
            return Err(Error::Checkpoint(format!(
                "{}: backbone `{}` expects weight {}x{} and bias 1x{}",
                path.display(),
                spec.id,
                spec.input_dim(),
                spec.dim,
                spec.dim
            )));
        }
        return Ok((w, b));
    }
    let mut rng = seed::rng(spec.seed, "image-backbone", &[spec.dim as u64, spec.grid as u64]);
    let scale = (3.0 / spec.input_dim() as f64).sqrt();
    let w = Matrix::from_fn(spec.input_dim(), spec.dim, |_, _| rng.gen_range(-scale..scale));
    let b = Matrix::from_fn(1, spec.dim, |_, _| rng.gen_range(-0.1..0.1));
    Ok((w, b))
}

#[derive(Debug, Clone)]
pub struct ImageBackbone {
    pub spec: BackboneSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ImageBackbone {
    pub fn build(
        spec: &BackboneSpec,
        store: &mut ParamStore,
        group: ParamGroup,
        prefix: &str,
        trainable: bool,
    ) -> Result<Self> {
        let (w, b) = init_backbone(spec)?;
        let weight = store.add(format!("{prefix}.weight"), group, w, true);
        let bias = store.add(format!("{prefix}.bias"), group, b, false);
        store.get_mut(weight).trainable = trainable;
        store.get_mut(bias).trainable = trainable;
        Ok(ImageBackbone {
            spec: spec.clone(),
            weight,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// `1 × dim` feature row.
    pub fn forward(&self, g: &mut Graph, img: &ImageTensor) -> Var {
        let x = g.constant(Matrix::row_vector(pooled_input(img, self.spec.grid)));
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }

    pub fn encode(&self, store: &ParamStore, img: &ImageTensor) -> ImageFeature {
        let mut g = Graph::new(store);
        let v = self.forward(&mut g, img);
        ImageFeature {
            backbone_id: self.spec.id.clone(),
            vector: g.value(v).data().to_vec(),
        }
    }
}

/// Encoder selection plus checkpoint locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub text: String,
    pub text_dim: usize,
    pub image: String,
    pub image_dim: usize,
    pub single_flow_backbones: Vec<String>,
    pub checkpoints: BTreeMap<String, PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            text: TOY_TEXT.into(),
            text_dim: 32,
            image: TOY_IMAGE.into(),
            image_dim: 32,
            single_flow_backbones: vec![TOY_IMAGE.into()],
            checkpoints: BTreeMap::new(),
        }
    }
}

/// Specs for every usable encoder, with one instantiated copy of each
/// image backbone for standalone feature extraction.
#[derive(Debug, Clone)]
pub struct EncoderRegistry {
    text: BTreeMap<String, TextEncoderSpec>,
    image: BTreeMap<String, ImageBackbone>,
    store: ParamStore,
}

impl EncoderRegistry {
    /// Registry with `toy_text` and `toy_image`.
    pub fn toy(text_dim: usize, image_dim: usize) -> Self {
        let mut r = EncoderRegistry {
            text: BTreeMap::new(),
            image: BTreeMap::new(),
            store: ParamStore::new(),
        };
        r.text.insert(TOY_TEXT.into(), TextEncoderSpec::toy(text_dim));
        r.register_image(BackboneSpec::toy(TOY_IMAGE, image_dim))
            .expect("toy backbone needs no checkpoint");
        r
    }

    /// Build from configuration, resolving every referenced id. Ids
    /// starting with `toy_image` are seeded toys; named backbones need an
    /// existing checkpoint.
    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        let mut r = Self::toy(cfg.text_dim, cfg.image_dim);
        if !r.text.contains_key(&cfg.text) {
            return Err(Error::UnknownEncoder(cfg.text.clone()));
        }
        let mut wanted = vec![cfg.image.clone()];
        wanted.extend(cfg.single_flow_backbones.iter().cloned());
        for id in wanted {
            if r.image.contains_key(&id) {
                continue;
            }
            let spec = if id.starts_with(TOY_IMAGE) {
                BackboneSpec::toy(&id, cfg.image_dim)
            } else if PRETRAINED_BACKBONES.contains(&id.as_str()) {
                let path = cfg
                    .checkpoints
                    .get(&id)
                    .ok_or_else(|| Error::config(format!("backbone `{id}` needs `encoders.checkpoints.{id}`")))?;
                backbone_spec_from_checkpoint(&id, path)?
            } else {
                return Err(Error::UnknownEncoder(id));
            };
            r.register_image(spec)?;
        }
        Ok(r)
    }

    pub fn register_image(&mut self, spec: BackboneSpec) -> Result<()> {
        let prefix = format!("registry.{}", spec.id);
        let backbone = ImageBackbone::build(&spec, &mut self.store, ParamGroup::Image, &prefix, false)?;
        self.image.insert(spec.id.clone(), backbone);
        Ok(())
    }

    pub fn text_spec(&self, id: &str) -> Result<&TextEncoderSpec> {
        self.text.get(id).ok_or_else(|| Error::UnknownEncoder(id.to_string()))
    }

    pub fn image_spec(&self, id: &str) -> Result<&BackboneSpec> {
        self.image
            .get(id)
            .map(|b| &b.spec)
            .ok_or_else(|| Error::UnknownEncoder(id.to_string()))
    }

    /// Backbone weights as registered, for copying into a model.
    pub fn image_weights(&self, id: &str) -> Result<(Matrix, Matrix)> {
        let b = self.image.get(id).ok_or_else(|| Error::UnknownEncoder(id.to_string()))?;
        Ok((self.store.value(b.weight).clone(), self.store.value(b.bias).clone()))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.image.keys().map(String::as_str)
    }

    pub fn encode_text(&self, text: &str, id: &str, max_len: usize) -> Result<TextEncoding> {
        let spec = self.text_spec(id)?;
        let mut store = ParamStore::new();
        let enc = TextEncoder::build(spec, &mut store, ParamGroup::Text, "text");
        Ok(enc.encode(&store, text, max_len.min(MAX_TEXT_LEN)))
    }

    pub fn encode_image(&self, img: &ImageTensor, backbone_id: &str) -> Result<ImageFeature> {
        let b = self
            .image
            .get(backbone_id)
            .ok_or_else(|| Error::UnknownEncoder(backbone_id.to_string()))?;
        Ok(b.encode(&self.store, img))
    }

    /// One feature per id, in order. Every id is checked before any work.
    pub fn multi_backbone_features(&self, img: &ImageTensor, ids: &[impl AsRef<str>]) -> Result<Vec<ImageFeature>> {
        for id in ids {
            self.image_spec(id.as_ref())?;
        }
        ids.iter().map(|id| self.encode_image(img, id.as_ref())).collect()
    }
}

fn backbone_spec_from_checkpoint(id: &str, path: &Path) -> Result<BackboneSpec> {
    if !path.join("manifest.json").exists() {
        return Err(Error::config(format!(
            "checkpoint for `{id}` not found at {}",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path)?;
    let w = ck
        .tensors
        .get("weight")
        .ok_or_else(|| Error::Checkpoint(format!("{}: tensor `weight` missing", path.display())))?;
    let grid = ((w.rows() / 3) as f64).sqrt().round() as usize;
    if grid * grid * 3 != w.rows() {
        return Err(Error::Checkpoint(format!(
            "{}: weight rows {} are not 3·grid²",
            path.display(),
            w.rows()
        )));
    }
    Ok(BackboneSpec {
        id: id.into(),
        dim: w.cols(),
        grid,
        seed: 0,
        checkpoint: Some(path.to_path_buf()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(64, 64, |_, _, _| rng.gen::<f64>())
    }

    #[test]
    fn tokenizer_shapes() {
        let t = Tokenizer { vocab_size: 4096 };
        assert_eq!(t.encode("", 64), vec![CLS_ID, SEP_ID]);
        let long = vec!["word"; 500].join(" ");
        assert_eq!(t.encode(&long, 64).len(), 64);
        assert_eq!(words("Hello, WORLD!"), vec!["hello", ",", "world", "!"]);
        assert!(t.encode("x y z", 64)[1..4].iter().all(|i| (RESERVED_IDS..4096).contains(i)));
    }

    #[test]
    fn text_encoding_contract() {
        let reg = EncoderRegistry::toy(16, 8);
        let empty = reg.encode_text("", TOY_TEXT, 64).unwrap();
        assert_eq!(empty.token_embeddings.rows(), 2);
        assert_eq!(empty.attention_mask.iter().filter(|m| **m).count(), 2);
        assert!(empty.pooled.iter().all(|v| v.is_finite()));

        let long = vec!["token"; 500].join(" ");
        let enc = reg.encode_text(&long, TOY_TEXT, 64).unwrap();
        assert_eq!(enc.token_embeddings.rows(), 64);

        let a = reg.encode_text("same text", TOY_TEXT, 64).unwrap();
        let b = reg.encode_text("same text", TOY_TEXT, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_is_mean_of_table_rows() {
        let spec = TextEncoderSpec::toy(12);
        let table = toy_embedding_table(&spec);
        let reg = EncoderRegistry::toy(12, 8);
        let enc = reg.encode_text("a quick brown fox", TOY_TEXT, 64).unwrap();
        for d in 0..12 {
            let expected: f64 =
                enc.token_ids.iter().map(|&i| table.get(i, d)).sum::<f64>() / enc.token_ids.len() as f64;
            assert!((enc.pooled[d] - expected).abs() < 1e-12);
        }
        assert_eq!(reg.encode_text("x", "bert", 64).unwrap_err().to_string(), "unknown encoder id `bert`");
    }

    #[test]
    fn zero_input_returns_bias() {
        let reg = EncoderRegistry::toy(8, 32);
        // mid-gray normalizes to an all-zero input row
        let gray = ImageTensor::filled(256, 256, 0.5);
        let f = reg.encode_image(&gray, TOY_IMAGE).unwrap();
        let (_, bias) = reg.image_weights(TOY_IMAGE).unwrap();
        assert_eq!(f.vector, bias.data());
        assert_eq!(f.vector.len(), 32);
    }

    #[test]
    fn flip_changes_features() {
        let reg = EncoderRegistry::toy(8, 32);
        let img = random_image(11);
        let a = reg.encode_image(&img, TOY_IMAGE).unwrap();
        let b = reg.encode_image(&img.flip_horizontal(), TOY_IMAGE).unwrap();
        assert_ne!(a.vector, b.vector);
    }

    #[test]
    fn multi_backbone_contract() {
        let cfg = EncoderConfig {
            image_dim: 16,
            single_flow_backbones: ["toy_image_a", "toy_image_b", "toy_image_c", "toy_image_d"]
                .map(String::from)
                .to_vec(),
            ..EncoderConfig::default()
        };
        let mut reg = EncoderRegistry::from_config(&cfg).unwrap();
        reg.register_image(BackboneSpec::toy("toy_image_wide", 24)).unwrap();
        let img = random_image(3);
        let feats = reg.multi_backbone_features(&img, &cfg.single_flow_backbones).unwrap();
        assert_eq!(feats.len(), 4);
        assert_eq!(
            feats.iter().map(|f| f.backbone_id.as_str()).collect::<Vec<_>>(),
            cfg.single_flow_backbones
        );

        let two = reg.multi_backbone_features(&img, &[TOY_IMAGE, "toy_image_wide"]).unwrap();
        assert_eq!((two[0].vector.len(), two[1].vector.len()), (16, 24));

        let one = reg.multi_backbone_features(&img, &[TOY_IMAGE]).unwrap();
        assert_eq!(one[0], reg.encode_image(&img, TOY_IMAGE).unwrap());

        let dup = reg.multi_backbone_features(&img, &[TOY_IMAGE, TOY_IMAGE]).unwrap();
        assert_eq!(dup[0], dup[1]);

        assert!(matches!(
            reg.multi_backbone_features(&img, &[TOY_IMAGE, "vgg"]),
            Err(Error::UnknownEncoder(id)) if id == "vgg"
        ));
    }

    #[test]
    fn pretrained_ids_need_checkpoints() {
        let cfg = EncoderConfig {
            image: "resnet18".into(),
            ..EncoderConfig::default()
        };
        assert!(matches!(EncoderRegistry::from_config(&cfg), Err(Error::Config(_))));

        let dir = tempfile::TempDir::new().unwrap();
        let mut with_path = cfg.clone();
        with_path.checkpoints.insert("resnet18".into(), dir.path().join("missing"));
        assert!(matches!(EncoderRegistry::from_config(&with_path), Err(Error::Config(_))));

        let mut ck = Checkpoint::default();
        ck.tensors.insert("weight".into(), Matrix::from_fn(4 * 4 * 3, 10, |r, c| (r + c) as f64 * 1e-3));
        ck.tensors.insert("bias".into(), Matrix::zeros(1, 10));
        let ck_dir = dir.path().join("resnet18");
        ck.save(&ck_dir).unwrap();
        with_path.checkpoints.insert("resnet18".into(), ck_dir);
        let reg = EncoderRegistry::from_config(&with_path).unwrap();
        let spec = reg.image_spec("resnet18").unwrap();
        assert_eq!((spec.dim, spec.grid), (10, 4));
        assert_eq!(reg.encode_image(&random_image(1), "resnet18").unwrap().vector.len(), 10);

        let unknown = EncoderConfig {
            image: "vgg16".into(),
            ..EncoderConfig::default()
        };
        assert!(matches!(EncoderRegistry::from_config(&unknown), Err(Error::UnknownEncoder(_))));
    }

    #[test]
    fn pooled_input_on_odd_sizes() {
        let img = ImageTensor::filled(5, 3, 1.0);
        let row = pooled_input(&img, 8);
        assert_eq!(row.len(), 192);
        assert!(row.iter().all(|v| (v - 1f64.tanh()).abs() < 1e-12));
    }
}
