//! Label schema: the five binary targets and the hierarchy between them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the five binary targets, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Misogynous,
    Shaming,
    Stereotype,
    Objectification,
    Violence,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Misogynous,
        Task::Shaming,
        Task::Stereotype,
        Task::Objectification,
        Task::Violence,
    ];

    /// The four subcategories that each imply `Misogynous`.
    pub const SUBCATEGORIES: [Task; 4] = [
        Task::Shaming,
        Task::Stereotype,
        Task::Objectification,
        Task::Violence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Misogynous => "misogynous",
            Task::Shaming => "shaming",
            Task::Stereotype => "stereotype",
            Task::Objectification => "objectification",
            Task::Violence => "violence",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::argument(format!("unknown task `{s}`")))
    }
}

/// Sort a task list into canonical order and reject duplicates or emptiness.
pub fn canonical_tasks(tasks: &[Task]) -> Result<Vec<Task>> {
    if tasks.is_empty() {
        return Err(Error::argument("task list must not be empty"));
    }
    let mut sorted = tasks.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != tasks.len() {
        return Err(Error::argument("task list contains duplicates"));
    }
    Ok(sorted)
}

/// The five binary targets of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelVector([bool; 5]);

impl LabelVector {
    pub const NEGATIVE: LabelVector = LabelVector([false; 5]);

    pub fn new(bits: [bool; 5]) -> Self {
        LabelVector(bits)
    }

    /// Build from 0/1 integers; anything else is rejected.
    pub fn from_ints(values: [u8; 5]) -> Result<Self> {
        let mut bits = [false; 5];
        for (slot, v) in bits.iter_mut().zip(values) {
            *slot = match v {
                0 => false,
                1 => true,
                other => return Err(Error::argument(format!("label value {other} is not 0 or 1"))),
            };
        }
        Ok(LabelVector(bits))
    }

    pub fn get(&self, task: Task) -> bool {
        self.0[task.index()]
    }

    pub fn set(&mut self, task: Task, value: bool) {
        self.0[task.index()] = value;
    }

    pub fn bits(&self) -> [bool; 5] {
        self.0
    }

    pub fn as_f64(&self, task: Task) -> f64 {
        if self.get(task) {
            1.0
        } else {
            0.0
        }
    }

    pub fn is_all_negative(&self) -> bool {
        self.0.iter().all(|b| !b)
    }

    pub fn validate_hierarchy(&self) -> bool {
        validate_hierarchy(self)
    }
}

/// True iff any subcategory being set implies `misogynous` is set.
pub fn validate_hierarchy(labels: &LabelVector) -> bool {
    let any_sub = Task::SUBCATEGORIES.iter().any(|&t| labels.get(t));
    !any_sub || labels.get(Task::Misogynous)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: [u8; 5]) -> LabelVector {
        LabelVector::from_ints(v).unwrap()
    }

    #[test]
    fn hierarchy_examples() {
        assert!(validate_hierarchy(&lv([1, 1, 0, 0, 0])));
        assert!(!validate_hierarchy(&lv([0, 0, 1, 0, 0])));
        assert!(validate_hierarchy(&lv([0, 0, 0, 0, 0])));
    }

    #[test]
    fn hierarchy_exhaustive() {
        for mask in 0u8..32 {
            let bits: [bool; 5] = std::array::from_fn(|i| mask >> i & 1 == 1);
            let l = LabelVector::new(bits);
            let expected = bits[0] || !bits[1..].iter().any(|b| *b);
            assert_eq!(validate_hierarchy(&l), expected, "mask {mask:05b}");
        }
    }

    #[test]
    fn non_binary_rejected() {
        assert!(LabelVector::from_ints([2, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn task_order_and_parse() {
        let names: Vec<_> = Task::ALL.iter().map(|t| t.name()).collect();
        assert_eq!(
            names,
            ["misogynous", "shaming", "stereotype", "objectification", "violence"]
        );
        assert_eq!("Violence".parse::<Task>().unwrap(), Task::Violence);
        assert_eq!(
            canonical_tasks(&[Task::Violence, Task::Misogynous]).unwrap(),
            vec![Task::Misogynous, Task::Violence]
        );
        assert!(canonical_tasks(&[]).is_err());
        assert!(canonical_tasks(&[Task::Shaming, Task::Shaming]).is_err());
    }
}
