//! Synthetic memes for tests and desk-scale runs.
//!
//! Labels are drawn with exact per-label counts matching the reference
//! prevalences (misogynous 50.0%, shaming 12.7%, stereotype 28.1%,
//! objectification 22.0%, violence 9.5%) and always satisfy the hierarchy.
//! Text carries placeholder cue tokens and images carry per-label motifs, so
//! both modalities are informative but noisy.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{escape_text, write_file, Dataset, MemeSample, Source, SplitTag};
use crate::error::{Error, Result};
use crate::image::{ImageRef, ImageTensor};
use crate::labels::{LabelVector, Task};
use crate::predictions::PredictionMatrix;
use crate::seed;

pub const PROCEDURAL_SIZE: usize = 64;

pub const REFERENCE_PREVALENCE: [f64; 5] = [0.50, 0.127, 0.281, 0.22, 0.095];

const FILLER: [&str; 40] = [
    "when", "you", "the", "me", "that", "moment", "finally", "monday", "coffee", "again", "why", "is", "this",
    "everyone", "nobody", "said", "look", "at", "my", "face", "weekend", "work", "friends", "today", "always",
    "never", "internet", "photo", "meme", "real", "life", "expectation", "reality", "boss", "cat", "dog", "pizza",
    "game", "phone", "night",
];

fn cue(task: Task, k: usize) -> String {
    let stem = match task {
        Task::Misogynous => "cuemis",
        Task::Shaming => "cuesham",
        Task::Stereotype => "cuester",
        Task::Objectification => "cueobj",
        Task::Violence => "cueviol",
    };
    format!("{stem}{k}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub prevalence: [f64; 5],
    /// Probability that a positive label leaves a cue in the text.
    pub text_signal: f64,
    /// Probability that a positive label leaves a motif in the image.
    pub image_signal: f64,
    /// Probability of a spurious cue/motif for a negative label.
    pub noise: f64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 500,
            seed: 7,
            prevalence: REFERENCE_PREVALENCE,
            text_signal: 0.9,
            image_signal: 0.8,
            noise: 0.05,
            id_prefix: "syn".into(),
        }
    }
}

/// Label vectors with exact counts: `round(n·p)` positives per label,
/// subcategories drawn only among misogynous rows.
pub fn calibrated_labels(n: usize, prevalence: &[f64; 5], seed: u64) -> Result<Vec<LabelVector>> {
    let mut rng = seed::rng(seed, "synth-labels", &[n as u64]);
    let n_mis = (n as f64 * prevalence[0]).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let positives = &order[..n_mis];
    let mut labels = vec![LabelVector::NEGATIVE; n];
    for &i in positives {
        labels[i].set(Task::Misogynous, true);
    }
    for t in Task::SUBCATEGORIES {
        let count = (n as f64 * prevalence[t.index()]).round() as usize;
        if count > n_mis {
            return Err(Error::argument(format!(
                "{} prevalence exceeds misogynous prevalence",
                t.name()
            )));
        }
        let mut pool = positives.to_vec();
        pool.shuffle(&mut rng);
        for &i in &pool[..count] {
            labels[i].set(t, true);
        }
    }
    Ok(labels)
}

fn motif_bits<R: Rng>(labels: &LabelVector, signal: f64, noise: f64, rng: &mut R) -> u8 {
    let mut bits = 0u8;
    for t in Task::ALL {
        let on = if labels.get(t) { rng.gen_bool(signal) } else { rng.gen_bool(noise) };
        if on {
            bits |= 1 << t.index();
        }
    }
    bits
}

fn synth_text<R: Rng>(labels: &LabelVector, cfg: &SynthConfig, rng: &mut R) -> String {
    let mut words: Vec<String> = (0..rng.gen_range(4..10))
        .map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string())
        .collect();
    for t in Task::ALL {
        let p = if labels.get(t) { cfg.text_signal } else { cfg.noise };
        if rng.gen_bool(p) {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, cue(t, rng.gen_range(0..3)));
        }
    }
    words.join(" ")
}

/// A labeled in-memory dataset with procedural images.
pub fn synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let labels = calibrated_labels(cfg.n, &cfg.prevalence, cfg.seed)?;
    let mut rng = seed::rng(cfg.seed, "synth-samples", &[cfg.n as u64]);
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let motif = motif_bits(l, cfg.image_signal, cfg.noise, &mut rng);
            MemeSample {
                id: format!("{}_{i:05}.png", cfg.id_prefix),
                text: synth_text(l, cfg, &mut rng),
                image: ImageRef::Procedural {
                    seed: seed::derive(cfg.seed, "synth-image", &[i as u64]),
                    motif,
                },
                labels: Some(*l),
                source: Source::Main,
            }
        })
        .collect();
    Dataset::new(samples, SplitTag::Train)
}

pub const OFFENSE_LEVELS: [&str; 5] = ["not_offensive", "slight", "offensive", "very_offensive", "hateful_offensive"];

/// External rows: `(sample, offense_level)`; only the first two levels
/// qualify as negatives.
pub fn synthetic_external(n: usize, seed: u64) -> Vec<(MemeSample, &'static str)> {
    let mut rng = seed::rng(seed, "synth-external", &[n as u64]);
    let cfg = SynthConfig::default();
    (0..n)
        .map(|i| {
            let level = OFFENSE_LEVELS[rng.gen_range(0..OFFENSE_LEVELS.len())];
            let sample = MemeSample {
                id: format!("ext_{i:05}.png"),
                text: synth_text(&LabelVector::NEGATIVE, &cfg, &mut rng),
                image: ImageRef::Procedural {
                    seed: seed::derive(seed, "synth-external-image", &[i as u64]),
                    motif: motif_bits(&LabelVector::NEGATIVE, 0.0, cfg.noise, &mut rng),
                },
                labels: Some(LabelVector::NEGATIVE),
                source: Source::External,
            };
            (sample, level)
        })
        .collect()
}

/// Smooth seeded background plus one motif per set bit of `motif`.
pub fn render_image(seed: u64, motif: u8, size: usize) -> ImageTensor {
    let mut rng = seed::rng(seed, "render", &[motif as u64, size as u64]);
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.25..0.75));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
    let s = size as f64;
    let mut img = ImageTensor::from_fn(size, size, |y, x, c| {
        let grad = tilt[c] * ((x + y) as f64 / (2.0 * s) - 0.5);
        let n = rng.gen_range(-0.03..0.03);
        (base[c] + grad + n).clamp(0.0, 1.0)
    });
    let on = |t: Task| motif >> t.index() & 1 == 1;
    let mut data = img.data().to_vec();
    let mut paint = |y: usize, x: usize, rgb: [f64; 3]| {
        let i = (y * size + x) * 3;
        data[i..i + 3].copy_from_slice(&rgb);
    };
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 / s, x as f64 / s);
            if on(Task::Misogynous) && fy < 0.5 && fx < 0.5 {
                paint(y, x, [0.95, 0.1, 0.1]);
            }
            if on(Task::Shaming) && fy > 0.5 && ((y / 4) % 2 == 0) {
                paint(y, x, [0.95, 0.9, 0.1]);
            }
            if on(Task::Stereotype) && (fy - 0.5).powi(2) + (fx - 0.5).powi(2) < 0.04 {
                paint(y, x, [0.1, 0.2, 0.95]);
            }
            if on(Task::Objectification) && fx > 0.5 && (fx - fy).abs() < 0.1 {
                paint(y, x, [0.1, 0.9, 0.2]);
            }
            if on(Task::Violence) && fy > 0.7 && fx > 0.7 {
                paint(y, x, [0.05, 0.05, 0.05]);
            }
        }
    }
    img = ImageTensor::new(size, size, data).expect("same shape");
    img
}

fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf = ::image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| Error::Internal("image buffer size".into()))?;
    buf.save(path).map_err(|e| Error::Internal(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub train: usize,
    pub test: usize,
    pub external: usize,
}

/// Write `train.tsv`, `test.tsv` (unlabeled), `test_gold.tsv` and
/// `external.tsv` plus a PNG per sample into `dir`.
pub fn write_synthetic_corpus(dir: &Path, train: &SynthConfig, n_test: usize, n_external: usize) -> Result<CorpusSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train_ds = synthetic_dataset(train)?;
    let test_cfg = SynthConfig {
        n: n_test,
        seed: seed::derive(train.seed, "synth-test", &[]),
        id_prefix: "test".into(),
        ..train.clone()
    };
    let test_ds = synthetic_dataset(&test_cfg)?;
    let external = synthetic_external(n_external, seed::derive(train.seed, "synth-ext", &[]));

    let render = |s: &MemeSample| -> Result<()> {
        if let ImageRef::Procedural { seed, motif } = s.image {
            save_png(&render_image(seed, motif, PROCEDURAL_SIZE), &dir.join(&s.id))?;
        }
        Ok(())
    };
    for s in train_ds.samples.iter().chain(&test_ds.samples) {
        render(s)?;
    }
    crate::data::write_main_corpus(&train_ds, &dir.join("train.tsv"))?;
    crate::data::write_main_corpus(&test_ds, &dir.join("test_gold.tsv"))?;
    let unlabeled = Dataset {
        samples: test_ds
            .samples
            .iter()
            .map(|s| MemeSample {
                labels: None,
                ..s.clone()
            })
            .collect(),
        split_tag: SplitTag::Test,
    };
    crate::data::write_main_corpus(&unlabeled, &dir.join("test.tsv"))?;

    let mut ext = String::from("file_name\ttext\toffense_level\n");
    for (s, level) in &external {
        render(s)?;
        ext.push_str(&format!("{}\t{}\t{}\n", s.id, escape_text(&s.text), level));
    }
    write_file(&dir.join("external.tsv"), &ext)?;
    Ok(CorpusSummary {
        train: train_ds.len(),
        test: test_ds.len(),
        external: external.len(),
    })
}

/// Parameters of the simulated prediction noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Accuracy of the single-task misogyny classifier.
    pub stage2_accuracy: f64,
    /// Accuracy of the multi-task model's misogyny column.
    pub stage1_mis_accuracy: f64,
    /// Chance a subcategory fires on a row that is not misogynous.
    pub subcategory_false_positive: f64,
    /// Chance a true subcategory is detected.
    pub subcategory_recall: f64,
    /// Chance of a spurious subcategory on a misogynous row.
    pub subcategory_confusion: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            stage2_accuracy: 0.9,
            stage1_mis_accuracy: 0.8,
            subcategory_false_positive: 0.25,
            subcategory_recall: 0.75,
            subcategory_confusion: 0.1,
        }
    }
}

fn noisy_prob<R: Rng>(positive: bool, rng: &mut R) -> f64 {
    if positive {
        rng.gen_range(0.5..1.0)
    } else {
        rng.gen_range(0.0..0.5)
    }
}

/// Simulated held-out predictions for `gold`: an `N × 5` multi-task
/// ensemble with noisy subcategories and an `N × 1` misogyny prediction.
pub fn simulate_predictions(gold: &[LabelVector], noise: &NoiseModel, seed: u64) -> (PredictionMatrix, PredictionMatrix) {
    let mut rng = seed::rng(seed, "simulate-predictions", &[gold.len() as u64]);
    let ids: Vec<String> = (0..gold.len()).map(|i| format!("held_{i:05}")).collect();
    let mut multi = Vec::with_capacity(gold.len());
    let mut single = Vec::with_capacity(gold.len());
    for l in gold {
        let mis = l.get(Task::Misogynous);
        let s2 = if rng.gen_bool(noise.stage2_accuracy) { mis } else { !mis };
        single.push(vec![noisy_prob(s2, &mut rng)]);
        let s1 = if rng.gen_bool(noise.stage1_mis_accuracy) { mis } else { !mis };
        let mut row = vec![noisy_prob(s1, &mut rng)];
        for t in Task::SUBCATEGORIES {
            let fire = if l.get(t) {
                rng.gen_bool(noise.subcategory_recall)
            } else if mis {
                rng.gen_bool(noise.subcategory_confusion)
            } else {
                rng.gen_bool(noise.subcategory_false_positive)
            };
            row.push(noisy_prob(fire, &mut rng));
        }
        multi.push(row);
    }
    (
        PredictionMatrix::new(ids.clone(), Task::ALL.to_vec(), multi).expect("consistent shape"),
        PredictionMatrix::new(ids, vec![Task::Misogynous], single).expect("consistent shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_match_reference_counts() {
        let labels = calibrated_labels(2000, &REFERENCE_PREVALENCE, 3).unwrap();
        let count = |t: Task| labels.iter().filter(|l| l.get(t)).count();
        assert_eq!(count(Task::Misogynous), 1000);
        assert_eq!(count(Task::Shaming), 254);
        assert_eq!(count(Task::Stereotype), 562);
        assert_eq!(count(Task::Objectification), 440);
        assert_eq!(count(Task::Violence), 190);
        assert!(labels.iter().all(|l| l.validate_hierarchy()));
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = SynthConfig {
            n: 40,
            ..SynthConfig::default()
        };
        assert_eq!(synthetic_dataset(&cfg).unwrap(), synthetic_dataset(&cfg).unwrap());
    }

    #[test]
    fn motifs_change_pixels() {
        let plain = render_image(5, 0, 32);
        let marked = render_image(5, 1, 32);
        assert_ne!(plain, marked);
        assert!(marked.in_unit_range());
        assert_eq!(marked.get(0, 0, 0), 0.95);
    }

    #[test]
    fn simulated_shapes() {
        let gold = calibrated_labels(100, &REFERENCE_PREVALENCE, 1).unwrap();
        let (multi, single) = simulate_predictions(&gold, &NoiseModel::default(), 1);
        assert_eq!((multi.len(), multi.width()), (100, 5));
        assert_eq!((single.len(), single.width()), (100, 1));
    }
}
