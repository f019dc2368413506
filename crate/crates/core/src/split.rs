//! Multi-label stratified k-fold assignment (iterative stratification).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::data::{read_file, write_file, Dataset};
use crate::error::{Error, Result};
use crate::labels::{LabelVector, Task};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Every dataset id is assigned and nothing else is.
    pub fn check_covers(&self, dataset: &Dataset) -> Result<()> {
        let ids: HashSet<&str> = dataset.samples.iter().map(|s| s.id.as_str()).collect();
        if let Some(missing) = dataset.samples.iter().find(|s| !self.assignment.contains_key(&s.id)) {
            return Err(Error::argument(format!("fold plan has no entry for sample `{}`", missing.id)));
        }
        if let Some(extra) = self.assignment.keys().find(|id| !ids.contains(id.as_str())) {
            return Err(Error::argument(format!("fold plan names `{extra}`, which is not in the dataset")));
        }
        Ok(())
    }

    /// Dataset row indices of the training and validation sides of `fold`.
    pub fn split_indices(&self, dataset: &Dataset, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        self.check_covers(dataset)?;
        if fold >= self.k {
            return Err(Error::argument(format!("fold {fold} out of range for k = {}", self.k)));
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (i, s) in dataset.samples.iter().enumerate() {
            if self.assignment[&s.id] == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, val))
    }

    /// `sample_id<TAB>fold`, sorted by id, with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sample_id\tfold\n");
        for (id, f) in &self.assignment {
            out.push_str(&format!("{id}\t{f}\n"));
        }
        out
    }

    pub fn from_tsv(contents: &str, seed: u64) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (i, line) in contents.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || (i == 0 && line.starts_with("sample_id")) {
                continue;
            }
            let (id, fold) = line.split_once('\t').ok_or_else(|| Error::Parse {
                row: i + 1,
                message: "expected `sample_id<TAB>fold`".into(),
            })?;
            let fold: usize = fold.trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                message: format!("`{fold}` is not a fold index"),
            })?;
            if assignment.insert(id.to_string(), fold).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
        }
        let k = assignment.values().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::Parse {
                row: 1,
                message: "fold plan needs at least two folds".into(),
            });
        }
        Ok(FoldPlan { k, assignment, seed })
    }

    /// SHA-256 of the TSV form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_tsv())
    }

    pub fn read(path: &Path, seed: u64) -> Result<Self> {
        Self::from_tsv(&read_file(path)?, seed)
    }
}

fn labels_of(dataset: &Dataset) -> Result<Vec<LabelVector>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            s.labels
                .ok_or_else(|| Error::argument(format!("sample `{}` has no labels", s.id)))
        })
        .collect()
}

/// Pick the index with the largest `primary`, then largest `secondary`,
/// then a seeded-random choice among the remaining ties.
fn argmax_tie_break(primary: &[f64], secondary: &[f64], rng: &mut impl Rng) -> usize {
    const EPS: f64 = 1e-9;
    let best = primary.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first: Vec<usize> = (0..primary.len()).filter(|&j| primary[j] >= best - EPS).collect();
    let best2 = first.iter().map(|&j| secondary[j]).fold(f64::NEG_INFINITY, f64::max);
    let second: Vec<usize> = first.into_iter().filter(|&j| secondary[j] >= best2 - EPS).collect();
    if second.len() == 1 {
        second[0]
    } else {
        second[rng.gen_range(0..second.len())]
    }
}

/// Number of seeded greedy passes; the most balanced one is kept.
pub const RESTARTS: u64 = 32;

/// Iterative stratification: labels are processed rarest first, and each
/// sample carrying the current label goes to the fold that most wants that
/// label; ties go to the fold with most free capacity, then to a seeded
/// random pick. Samples with no positive label only fill capacity.
///
/// The greedy pass is run [`RESTARTS`] times with derived seeds and the
/// plan with the smallest maximum per-label rate deviation is returned
/// (earliest pass on ties).
pub fn stratified_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::argument(format!("k must be at least 2, got {k}")));
    }
    let n = dataset.len();
    if k > n {
        return Err(Error::argument(format!("k = {k} exceeds the {n} samples")));
    }
    let labels = labels_of(dataset)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..RESTARTS {
        let folds = greedy_pass(&labels, k, &mut seed::rng(seed, "stratified-kfold", &[k as u64, r]));
        let dev = balance(&labels, &folds, k).3;
        if best.as_ref().is_none_or(|(d, _)| dev < *d) {
            best = Some((dev, folds));
        }
    }
    let (_, folds) = best.expect("at least one pass");
    let assignment = dataset.samples.iter().zip(folds).map(|(s, f)| (s.id.clone(), f)).collect();
    Ok(FoldPlan { k, assignment, seed })
}

fn greedy_pass(labels: &[LabelVector], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = labels.len();
    let ratio = 1.0 / k as f64;
    let mut capacity = vec![n as f64 * ratio; k];
    let mut demand: Vec<Vec<f64>> = Task::ALL
        .iter()
        .map(|&t| {
            let positives = labels.iter().filter(|l| l.get(t)).count() as f64;
            vec![positives * ratio; k]
        })
        .collect();
    let mut fold_of: Vec<Option<usize>> = vec![None; n];

    let assign = |i: usize, f: usize, capacity: &mut [f64], demand: &mut [Vec<f64>], fold_of: &mut [Option<usize>]| {
        fold_of[i] = Some(f);
        capacity[f] -= 1.0;
        for t in Task::ALL {
            if labels[i].get(t) {
                demand[t.index()][f] -= 1.0;
            }
        }
    };

    loop {
        let mut open = [0usize; 5];
        for (i, l) in labels.iter().enumerate() {
            if fold_of[i].is_none() {
                for t in Task::ALL {
                    open[t.index()] += usize::from(l.get(t));
                }
            }
        }
        let Some(label) = (0..5).filter(|&c| open[c] > 0).min_by_key(|&c| (open[c], c)) else {
            break;
        };
        for i in 0..n {
            if fold_of[i].is_some() || !labels[i].bits()[label] {
                continue;
            }
            let f = argmax_tie_break(&demand[label], &capacity, rng);
            assign(i, f, &mut capacity, &mut demand, &mut fold_of);
        }
    }
    for i in 0..n {
        if fold_of[i].is_none() {
            let f = argmax_tie_break(&capacity, &capacity, rng);
            assign(i, f, &mut capacity, &mut demand, &mut fold_of);
        }
    }
    fold_of.into_iter().map(|f| f.expect("every sample assigned")).collect()
}

/// Fold sizes, per-fold rates, global rates and the largest deviation.
fn balance(labels: &[LabelVector], folds: &[usize], k: usize) -> (Vec<usize>, Vec<[f64; 5]>, [f64; 5], f64) {
    let mut sizes = vec![0usize; k];
    let mut counts = vec![[0usize; 5]; k];
    let mut total = [0usize; 5];
    for (l, &f) in labels.iter().zip(folds) {
        sizes[f] += 1;
        for t in Task::ALL {
            if l.get(t) {
                counts[f][t.index()] += 1;
                total[t.index()] += 1;
            }
        }
    }
    let n = labels.len().max(1) as f64;
    let global = total.map(|c| c as f64 / n);
    let rates: Vec<[f64; 5]> = counts
        .iter()
        .zip(&sizes)
        .map(|(c, &s)| c.map(|x| if s == 0 { 0.0 } else { x as f64 / s as f64 }))
        .collect();
    let max_deviation = rates
        .iter()
        .flat_map(|r| r.iter().zip(&global).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    (sizes, rates, global, max_deviation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub sizes: Vec<usize>,
    /// `k` rows of per-label positive rates.
    pub rates: Vec<[f64; 5]>,
    pub global: [f64; 5],
    pub max_deviation: f64,
}

impl BalanceReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("fold\tsize");
        for t in Task::ALL {
            out.push('\t');
            out.push_str(t.name());
        }
        out.push('\n');
        for (f, (size, row)) in self.sizes.iter().zip(&self.rates).enumerate() {
            out.push_str(&format!("{f}\t{size}"));
            for r in row {
                out.push_str(&format!("\t{r:.6}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("global\t{}", self.sizes.iter().sum::<usize>()));
        for r in &self.global {
            out.push_str(&format!("\t{r:.6}"));
        }
        out.push('\n');
        out.push_str(&format!("max_abs_deviation\t\t{:.6}\n", self.max_deviation));
        out
    }
}

impl fmt::Display for BalanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<8}{:>6}", "fold", "n")?;
        for t in Task::ALL {
            write!(f, "{:>17}", t.name())?;
        }
        writeln!(f)?;
        for (i, (size, row)) in self.sizes.iter().zip(&self.rates).enumerate() {
            write!(f, "{i:<8}{size:>6}")?;
            for r in row {
                write!(f, "{r:>17.4}")?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<8}{:>6}", "global", self.sizes.iter().sum::<usize>())?;
        for r in &self.global {
            write!(f, "{r:>17.4}")?;
        }
        writeln!(f)?;
        writeln!(f, "max |fold rate - global rate| = {:.4}", self.max_deviation)
    }
}

/// Per-fold positive rate of each label and the largest deviation from the
/// global rate.
pub fn fold_balance_report(plan: &FoldPlan, dataset: &Dataset) -> Result<BalanceReport> {
    plan.check_covers(dataset)?;
    let labels = labels_of(dataset)?;
    let folds: Vec<usize> = dataset.samples.iter().map(|s| plan.assignment[&s.id]).collect();
    if let Some(&bad) = folds.iter().find(|&&f| f >= plan.k) {
        return Err(Error::argument(format!("fold index {bad} out of range for k = {}", plan.k)));
    }
    let (sizes, rates, global, max_deviation) = balance(&labels, &folds, plan.k);
    Ok(BalanceReport {
        sizes,
        rates,
        global,
        max_deviation,
    })
}
