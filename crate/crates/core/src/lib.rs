//! Multimodal meme classification for misogyny detection.
//!
//! Two fusion architectures share toy text and image encoders: a
//! double-tower model that concatenates pooled text and image features in
//! an MLP head, and a single-flow transformer over text tokens plus one
//! visual token per image backbone. Training runs in two stages on a
//! stratified k-fold plan:
//!
//! - Stage 1 learns the five labels jointly (`misogynous` plus the four
//!   subcategories) on the main corpus.
//! - Stage 2 learns `misogynous` alone, with external all-negative memes
//!   added to every fold's training side.
//!
//! The Stage-1 test predictions of both architectures are averaged with
//! [`postprocess::ensemble`], then [`postprocess::hierarchy_postprocess`]
//! zeroes subcategories wherever the Stage-2 model says the meme is not
//! misogynous.
//!
//! The batch commands in [`commands`] drive the whole pipeline through a
//! run directory; the `memefuse` binary is a thin wrapper around them.
//!
//! ```text
//! examples/
//! ├── synthetic_corpus.rs      write and reload a synthetic corpus
//! ├── stratified_split.rs      multi-label k-fold plan and balance report
//! ├── image_pipeline.rs        resize, augmentation, five-crop, encoders
//! ├── fusion_models.rs         both architectures, parameter groups
//! ├── lr_schedule.rs           warmup/decay schedule and AdamW
//! ├── train_stage.rs           Stage-1 k-fold training and evaluation
//! ├── ensemble_postprocess.rs  ensembling and hierarchy correction
//! ├── evaluation.rs            F1 scores and the results table
//! └── pipeline.rs              every command in a fresh run directory
//! ```

pub mod autograd;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod image;
pub mod labels;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod postprocess;
pub mod predictions;
pub mod seed;
pub mod split;
pub mod synth;
pub mod tensor;
pub mod training;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use labels::{LabelVector, Task};
pub use models::{Architecture, FusionModel, ModelConfig};
pub use predictions::PredictionMatrix;
pub use training::{Stage, TrainingConfig};
