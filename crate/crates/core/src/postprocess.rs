//! Weighted model ensembling and label-hierarchy correction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_file;
use crate::error::{Error, Result};
use crate::labels::{LabelVector, Task};
use crate::predictions::PredictionMatrix;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    /// Weight on the single-flow predictions.
    pub alpha: f64,
    pub y1_source: String,
    pub y2_source: String,
}

/// `alpha · y1 + (1 − alpha) · y2`, elementwise. `y1` is the single-flow
/// prediction and `y2` the double-tower one.
pub fn ensemble(y1: &PredictionMatrix, y2: &PredictionMatrix, alpha: f64) -> Result<PredictionMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::argument(format!("alpha {alpha} outside [0, 1]")));
    }
    y1.check_ids_aligned(y2)?;
    if y1.tasks() != y2.tasks() {
        return Err(Error::Alignment {
            id: y1.ids().first().cloned().unwrap_or_default(),
            message: format!("task columns differ: {:?} vs {:?}", y1.tasks(), y2.tasks()),
        });
    }
    let rows = y1
        .rows()
        .iter()
        .zip(y2.rows())
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&p, &q)| (alpha * p + (1.0 - alpha) * q).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    PredictionMatrix::new(y1.ids().to_vec(), y1.tasks().to_vec(), rows)
}

/// Zero the four subcategory probabilities on rows whose single-task
/// misogyny probability is below `threshold`. With `replace_misogynous`
/// the misogynous column takes the single-task value.
pub fn hierarchy_postprocess(
    subtask_b: &PredictionMatrix,
    misogyny: &PredictionMatrix,
    threshold: f64,
    replace_misogynous: bool,
) -> Result<PredictionMatrix> {
    if subtask_b.tasks() != Task::ALL {
        return Err(Error::argument("sub-task B matrix must hold the five tasks in canonical order"));
    }
    let mis = misogyny
        .column(Task::Misogynous)
        .ok_or_else(|| Error::argument("misogyny matrix has no `misogynous` column"))?;
    subtask_b.check_ids_aligned(misogyny)?;
    let rows = subtask_b
        .rows()
        .iter()
        .zip(&mis)
        .map(|(row, &m)| {
            let mut out = row.clone();
            if replace_misogynous {
                out[Task::Misogynous.index()] = m;
            }
            if m < threshold {
                for t in Task::SUBCATEGORIES {
                    out[t.index()] = 0.0;
                }
            }
            out
        })
        .collect();
    PredictionMatrix::new(subtask_b.ids().to_vec(), subtask_b.tasks().to_vec(), rows)
}

/// 0/1 decisions, one row per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub ids: Vec<String>,
    pub tasks: Vec<Task>,
    pub rows: Vec<Vec<u8>>,
}

impl BinaryMatrix {
    pub fn column(&self, task: Task) -> Option<Vec<u8>> {
        let c = self.tasks.iter().position(|&t| t == task)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Rows as label vectors; only defined for five-task matrices.
    pub fn label_vectors(&self) -> Option<Vec<LabelVector>> {
        (self.tasks == Task::ALL).then(|| {
            self.rows
                .iter()
                .map(|r| LabelVector::new(std::array::from_fn(|i| r[i] == 1)))
                .collect()
        })
    }

    /// `sample_id<TAB>label...` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sample_id");
        for t in &self.tasks {
            out.push('\t');
            out.push_str(t.name());
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(&self.rows) {
            out.push_str(id);
            for v in row {
                out.push('\t');
                out.push(if *v == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_tsv())
    }
}

/// 1 iff the probability is at least `threshold`.
pub fn binarize(probs: &PredictionMatrix, threshold: f64) -> BinaryMatrix {
    BinaryMatrix {
        ids: probs.ids().to_vec(),
        tasks: probs.tasks().to_vec(),
        rows: probs
            .rows()
            .iter()
            .map(|r| r.iter().map(|&v| u8::from(v >= threshold)).collect())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> PredictionMatrix {
        PredictionMatrix::new(vec!["x".into()], vec![Task::Misogynous], vec![vec![v]]).unwrap()
    }

    fn five(row: [f64; 5]) -> PredictionMatrix {
        PredictionMatrix::new(vec!["x".into()], Task::ALL.to_vec(), vec![row.to_vec()]).unwrap()
    }

    #[test]
    fn ensemble_examples() {
        let out = ensemble(&one(0.8), &one(0.6), 0.1).unwrap();
        assert!((out.rows()[0][0] - 0.62).abs() < 1e-12);
        let same = ensemble(&one(0.37), &one(0.37), 0.1).unwrap();
        assert!((same.rows()[0][0] - 0.37).abs() < 1e-15);
        assert_eq!(ensemble(&one(0.8), &one(0.6), 1.0).unwrap(), one(0.8));
        assert!(ensemble(&one(0.8), &one(0.6), 1.1).is_err());
        assert!(ensemble(&one(0.8), &five([0.0; 5]), 0.5).is_err());
    }

    #[test]
    fn ensemble_misaligned_names_id() {
        let other = PredictionMatrix::new(vec!["y".into()], vec![Task::Misogynous], vec![vec![0.1]]).unwrap();
        match ensemble(&one(0.5), &other, 0.1) {
            Err(Error::Alignment { id, .. }) => assert_eq!(id, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hierarchy_examples() {
        let out = hierarchy_postprocess(&five([0.95, 0.8, 0.1, 0.6, 0.2]), &one(0.3), 0.5, true).unwrap();
        assert_eq!(out.rows()[0], vec![0.3, 0.0, 0.0, 0.0, 0.0]);

        let out = hierarchy_postprocess(&five([0.2, 0.8, 0.1, 0.6, 0.2]), &one(0.7), 0.5, true).unwrap();
        assert_eq!(out.rows()[0], vec![0.7, 0.8, 0.1, 0.6, 0.2]);

        let out = hierarchy_postprocess(&five([0.2, 0.8, 0.1, 0.6, 0.2]), &one(0.7), 0.5, false).unwrap();
        assert_eq!(out.rows()[0], vec![0.2, 0.8, 0.1, 0.6, 0.2]);

        let zero = five([0.0; 5]);
        assert_eq!(hierarchy_postprocess(&zero, &one(0.0), 0.5, true).unwrap(), zero);
    }

    #[test]
    fn binarize_boundary() {
        let b = binarize(&five([0.5, 0.4999, 1.0, 0.0, 0.75]), 0.5);
        assert_eq!(b.rows[0], vec![1, 0, 1, 0, 1]);
        let again = binarize(&five([1.0, 0.0, 1.0, 0.0, 1.0]), 0.5);
        assert_eq!(again.rows[0], vec![1, 0, 1, 0, 1]);
        assert_eq!(b.to_tsv(), "sample_id\tmisogynous\tshaming\tstereotype\tobjectification\tviolence\nx\t1\t0\t1\t0\t1\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(n: usize) -> impl Strategy<Value = PredictionMatrix> {
            proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 5), n).prop_map(move |rows| {
                let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
                PredictionMatrix::new(ids, Task::ALL.to_vec(), rows).unwrap()
            })
        }

        proptest! {
            #[test]
            fn postprocess_is_idempotent_and_valid(b in matrix(6), m in proptest::collection::vec(0.0f64..=1.0, 6)) {
                let mis = PredictionMatrix::new(b.ids().to_vec(), vec![Task::Misogynous], m.into_iter().map(|v| vec![v]).collect()).unwrap();
                let once = hierarchy_postprocess(&b, &mis, 0.5, true).unwrap();
                let twice = hierarchy_postprocess(&once, &mis, 0.5, true).unwrap();
                prop_assert_eq!(&once, &twice);
                for l in binarize(&once, 0.5).label_vectors().unwrap() {
                    prop_assert!(l.validate_hierarchy());
                }
            }

            #[test]
            fn ensemble_symmetry_and_monotonicity(a in matrix(4), b in matrix(4), alpha in 0.0f64..=1.0, bump in 0.0f64..0.5) {
                let ab = ensemble(&a, &b, alpha).unwrap();
                let ba = ensemble(&b, &a, 1.0 - alpha).unwrap();
                for (x, y) in ab.rows().iter().flatten().zip(ba.rows().iter().flatten()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                let bumped_rows = a.rows().iter().map(|r| r.iter().map(|v| (v + bump).min(1.0)).collect()).collect();
                let bumped = PredictionMatrix::new(a.ids().to_vec(), a.tasks().to_vec(), bumped_rows).unwrap();
                let up = ensemble(&bumped, &b, alpha).unwrap();
                for (x, y) in up.rows().iter().flatten().zip(ab.rows().iter().flatten()) {
                    prop_assert!(*x >= *y);
                }
            }
        }
    }
}
