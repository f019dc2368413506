//! F1 scores for the binary and multi-label tasks, and the results table.
//!
//! Zero division always yields 0: a class with no predicted and no gold
//! positives scores 0, not 1.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelVector, Task};
use crate::postprocess::binarize;
use crate::predictions::PredictionMatrix;

pub const ZERO_DIVISION_NOTE: &str = "F1 is defined as 0 when precision + recall = 0.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(pred: &[bool], gold: &[bool], positive: bool) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::argument(format!(
                "prediction length {} differs from gold length {}",
                pred.len(),
                gold.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gold) {
            match (p == positive, g == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

/// F1 of `positive` treated as the positive class.
pub fn f1_binary(pred: &[bool], gold: &[bool], positive: bool) -> Result<f64> {
    Ok(Confusion::count(pred, gold, positive)?.f1())
}

/// Mean of the class-1 and class-0 F1 scores.
pub fn macro_f1_binary_task(pred: &[bool], gold: &[bool]) -> Result<f64> {
    Ok((f1_binary(pred, gold, true)? + f1_binary(pred, gold, false)?) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Mode {
    #[default]
    Macro,
    Weighted,
}

impl FromStr for F1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "macro" => Ok(F1Mode::Macro),
            "weighted" => Ok(F1Mode::Weighted),
            other => Err(Error::argument(format!("unknown F1 mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub task: Task,
    pub f1: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilabelF1 {
    pub per_label: Vec<LabelScore>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl MultilabelF1 {
    pub fn score(&self, mode: F1Mode) -> f64 {
        match mode {
            F1Mode::Macro => self.macro_f1,
            F1Mode::Weighted => self.weighted_f1,
        }
    }
}

/// Per-label positive-class F1 with macro and support-weighted averages.
/// Rows of `pred` and `gold` hold one flag per entry of `tasks`.
pub fn multilabel_f1(pred: &[Vec<bool>], gold: &[Vec<bool>], tasks: &[Task]) -> Result<MultilabelF1> {
    if pred.len() != gold.len() {
        return Err(Error::argument(format!("{} prediction rows for {} gold rows", pred.len(), gold.len())));
    }
    if tasks.is_empty() {
        return Err(Error::argument("multi-label F1 needs at least one label"));
    }
    if let Some(i) = pred.iter().chain(gold).position(|r| r.len() != tasks.len()) {
        return Err(Error::argument(format!("row {i} does not have {} labels", tasks.len())));
    }
    let mut per_label = Vec::with_capacity(tasks.len());
    for (c, &task) in tasks.iter().enumerate() {
        let p: Vec<bool> = pred.iter().map(|r| r[c]).collect();
        let g: Vec<bool> = gold.iter().map(|r| r[c]).collect();
        let confusion = Confusion::count(&p, &g, true)?;
        per_label.push(LabelScore {
            task,
            f1: confusion.f1(),
            confusion,
        });
    }
    let macro_f1 = per_label.iter().map(|s| s.f1).sum::<f64>() / per_label.len() as f64;
    let total: usize = per_label.iter().map(|s| s.confusion.support()).sum();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_label.iter().map(|s| s.f1 * s.confusion.support() as f64).sum::<f64>() / total as f64
    };
    Ok(MultilabelF1 {
        per_label,
        macro_f1,
        weighted_f1,
    })
}

/// Convenience form over five-label vectors.
pub fn multilabel_f1_labels(pred: &[LabelVector], gold: &[LabelVector]) -> Result<MultilabelF1> {
    let rows = |v: &[LabelVector]| v.iter().map(|l| l.bits().to_vec()).collect::<Vec<_>>();
    multilabel_f1(&rows(pred), &rows(gold), &Task::ALL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub subtask_a: Option<f64>,
    pub subtask_b: Option<f64>,
}

impl ResultRow {
    pub fn new(method: impl Into<String>, subtask_a: f64, subtask_b: f64) -> Self {
        ResultRow {
            method: method.into(),
            subtask_a: Some(subtask_a),
            subtask_b: Some(subtask_b),
        }
    }
}

fn cell(v: Option<f64>, precision: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.precision$}"))
}

/// Plain-text table with aligned columns, rows in the given order. Missing
/// scores print as `-`.
pub fn results_table(rows: &[ResultRow]) -> String {
    let header = ["Method", "Sub-task A", "Sub-task B"];
    let width = rows.iter().map(|r| r.method.len()).chain([header[0].len()]).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}", header[0], header[1], header[2]);
    let _ = writeln!(out, "{}", "-".repeat(width + 24));
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}", r.method, cell(r.subtask_a, 3), cell(r.subtask_b, 3));
    }
    out
}

pub fn results_tsv(rows: &[ResultRow]) -> String {
    let mut out = String::from("method\tsubtask_a\tsubtask_b\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.method, cell(r.subtask_a, 6), cell(r.subtask_b, 6));
    }
    out
}

/// Scores of one prediction file against gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    /// Binary macro-F1 on the misogynous column, when present.
    pub subtask_a: Option<f64>,
    /// Multi-label F1, when all five columns are present.
    pub subtask_b: Option<MultilabelF1>,
}

impl Evaluation {
    pub fn subtask_b_score(&self, mode: F1Mode) -> Option<f64> {
        self.subtask_b.as_ref().map(|b| b.score(mode))
    }

    pub fn render(&self, mode: F1Mode) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples: {}", self.n);
        if let Some(a) = self.subtask_a {
            let _ = writeln!(out, "sub-task A macro-F1: {a:.4}");
        }
        if let Some(b) = &self.subtask_b {
            let primary = match mode {
                F1Mode::Macro => "macro",
                F1Mode::Weighted => "weighted",
            };
            let _ = writeln!(out, "sub-task B macro-F1: {:.4}", b.macro_f1);
            let _ = writeln!(out, "sub-task B weighted-F1: {:.4}", b.weighted_f1);
            let _ = writeln!(out, "sub-task B primary ({primary}): {:.4}", b.score(mode));
            let _ = writeln!(out, "{:<16}{:>8}{:>8}{:>6}{:>6}{:>6}", "label", "f1", "support", "tp", "fp", "fn");
            for s in &b.per_label {
                let _ = writeln!(
                    out,
                    "{:<16}{:>8.4}{:>8}{:>6}{:>6}{:>6}",
                    s.task.name(),
                    s.f1,
                    s.confusion.support(),
                    s.confusion.tp,
                    s.confusion.fp,
                    s.confusion.fn_
                );
            }
        }
        let _ = writeln!(out, "note: {ZERO_DIVISION_NOTE}");
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        if let Some(a) = self.subtask_a {
            let _ = writeln!(out, "subtask_a_macro_f1\t{a:.6}");
        }
        if let Some(b) = &self.subtask_b {
            let _ = writeln!(out, "subtask_b_macro_f1\t{:.6}", b.macro_f1);
            let _ = writeln!(out, "subtask_b_weighted_f1\t{:.6}", b.weighted_f1);
            for s in &b.per_label {
                let _ = writeln!(out, "f1_{}\t{:.6}", s.task.name(), s.f1);
            }
        }
        out
    }
}

/// Binarize `pred` at `threshold` and score it against `gold`, which must
/// cover the same ids. Rows are matched after sorting both sides by id.
pub fn evaluate(pred: &PredictionMatrix, gold: &[(String, LabelVector)], threshold: f64) -> Result<Evaluation> {
    let pred = pred.sorted_by_id();
    let mut gold = gold.to_vec();
    gold.sort_by(|a, b| a.0.cmp(&b.0));
    let gold_ids: Vec<String> = gold.iter().map(|(id, _)| id.clone()).collect();
    let gold_matrix = PredictionMatrix::new(gold_ids, vec![Task::Misogynous], vec![vec![0.0]; gold.len()])?;
    pred.check_ids_aligned(&gold_matrix)?;

    let binary = binarize(&pred, threshold);
    let subtask_a = match binary.column(Task::Misogynous) {
        Some(col) => {
            let p: Vec<bool> = col.iter().map(|&v| v == 1).collect();
            let g: Vec<bool> = gold.iter().map(|(_, l)| l.get(Task::Misogynous)).collect();
            Some(macro_f1_binary_task(&p, &g)?)
        }
        None => None,
    };
    let subtask_b = match binary.label_vectors() {
        Some(rows) => {
            let g: Vec<LabelVector> = gold.iter().map(|(_, l)| *l).collect();
            Some(multilabel_f1_labels(&rows, &g)?)
        }
        None => None,
    };
    Ok(Evaluation {
        n: gold.len(),
        subtask_a,
        subtask_b,
    })
}
