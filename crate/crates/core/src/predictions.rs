//! Row-aligned probability matrices and their TSV form.
//!
//! File layout: a header `sample_id<TAB>task...` followed by one row per
//! sample with probabilities written as 6-decimal fixed point.

use std::path::Path;

use crate::data::{read_file, write_file};
use crate::error::{Error, Result};
use crate::labels::Task;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    ids: Vec<String>,
    tasks: Vec<Task>,
    rows: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn new(ids: Vec<String>, tasks: Vec<Task>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::argument(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        if tasks.is_empty() {
            return Err(Error::argument("prediction matrix needs at least one task"));
        }
        if let Some((id, _)) = ids.iter().zip(&rows).find(|(_, r)| r.len() != tasks.len()) {
            return Err(Error::argument(format!("row `{id}` width differs from {} tasks", tasks.len())));
        }
        Ok(PredictionMatrix { ids, tasks, rows })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.tasks.len()
    }

    pub fn get(&self, row: usize, task: Task) -> Option<f64> {
        let col = self.tasks.iter().position(|&t| t == task)?;
        Some(self.rows[row][col])
    }

    pub fn column(&self, task: Task) -> Option<Vec<f64>> {
        let col = self.tasks.iter().position(|&t| t == task)?;
        Some(self.rows.iter().map(|r| r[col]).collect())
    }

    /// Keep only `tasks`, in the given order.
    pub fn select(&self, tasks: &[Task]) -> Result<Self> {
        let cols = tasks
            .iter()
            .map(|t| {
                self.tasks
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| Error::argument(format!("prediction matrix has no `{t}` column")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
        Self::new(self.ids.clone(), tasks.to_vec(), rows)
    }

    pub fn sorted_by_id(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        PredictionMatrix {
            ids: order.iter().map(|&i| self.ids[i].clone()).collect(),
            tasks: self.tasks.clone(),
            rows: order.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Same ids in the same order; reports the first mismatching id.
    pub fn check_ids_aligned(&self, other: &PredictionMatrix) -> Result<()> {
        for (i, (a, b)) in self.ids.iter().zip(&other.ids).enumerate() {
            if a != b {
                return Err(Error::Alignment {
                    id: a.clone(),
                    message: format!("row {i} holds `{a}` on one side and `{b}` on the other"),
                });
            }
        }
        if self.len() != other.len() {
            let longer = if self.len() > other.len() { self } else { other };
            let id = longer.ids[self.len().min(other.len())].clone();
            return Err(Error::Alignment {
                id,
                message: format!("row counts differ ({} vs {})", self.len(), other.len()),
            });
        }
        Ok(())
    }

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
                out.push_str(&format!("\t{v:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(contents: &str) -> Result<Self> {
        let mut lines = contents.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            row: 1,
            message: "empty prediction file".into(),
        })?;
        let mut cols = header.trim_end_matches('\r').split('\t');
        if !cols.next().is_some_and(|c| c.eq_ignore_ascii_case("sample_id")) {
            return Err(Error::Parse {
                row: 1,
                message: "first column must be `sample_id`".into(),
            });
        }
        let tasks = cols
            .map(|c| c.parse::<Task>().map_err(|_| Error::Parse { row: 1, message: format!("unknown task column `{c}`") }))
            .collect::<Result<Vec<_>>>()?;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let mut cells = line.trim_end_matches('\r').split('\t');
            let id = cells.next().unwrap_or_default().to_string();
            let row = cells
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| (0.0..=1.0).contains(v))
                        .ok_or_else(|| Error::Parse {
                            row: idx + 1,
                            message: format!("`{c}` is not a probability"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != tasks.len() {
                return Err(Error::Parse {
                    row: idx + 1,
                    message: format!("expected {} values, found {}", tasks.len(), row.len()),
                });
            }
            ids.push(id);
            rows.push(row);
        }
        let m = Self::new(ids, tasks, rows)?;
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = m.ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_tsv())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tsv(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PredictionMatrix {
        PredictionMatrix::new(
            vec!["b".into(), "a".into()],
            vec![Task::Misogynous, Task::Violence],
            vec![vec![0.25, 1.0], vec![0.1234567, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn tsv_layout() {
        let text = sample().to_tsv();
        assert_eq!(text, "sample_id\tmisogynous\tviolence\nb\t0.250000\t1.000000\na\t0.123457\t0.000000\n");
        let back = PredictionMatrix::from_tsv(&text).unwrap();
        assert_eq!(back.get(1, Task::Misogynous), Some(0.123457));
        assert_eq!(back.to_tsv(), text);
    }

    #[test]
    fn bad_files_rejected() {
        assert!(PredictionMatrix::from_tsv("id\tmisogynous\nx\t0.1\n").is_err());
        assert!(PredictionMatrix::from_tsv("sample_id\tmisogynous\nx\t1.5\n").is_err());
        assert!(PredictionMatrix::from_tsv("sample_id\tmisogynous\nx\t0.1\t0.2\n").is_err());
        assert!(matches!(
            PredictionMatrix::from_tsv("sample_id\tmisogynous\nx\t0.1\nx\t0.2\n"),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn alignment_reports_first_bad_id() {
        let a = sample();
        let b = a.sorted_by_id();
        assert_eq!(b.ids(), ["a", "b"]);
        match a.check_ids_aligned(&b) {
            Err(Error::Alignment { id, .. }) => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(b.check_ids_aligned(&a.sorted_by_id()).is_ok());
        let short = PredictionMatrix::new(vec!["a".into()], vec![Task::Misogynous], vec![vec![0.5]]).unwrap();
        assert!(b.select(&[Task::Misogynous]).unwrap().check_ids_aligned(&short).is_err());
        assert!(a.select(&[Task::Shaming]).is_err());
    }
}
