//! Corpus loading: the main labeled/unlabeled TSV, the external negative
//! pool, and merging the two.
//!
//! Text cells use a backslash escape for tab, newline, carriage return and
//! backslash so that any UTF-8 string survives a write/read cycle. Text is
//! normalized to Unicode NFC on load and otherwise kept verbatim.
//!
//! Row numbers in errors are 1-based file line numbers (the header is line 1).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::image::ImageRef;
use crate::labels::{LabelVector, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Main,
    External,
}

impl Source {
    pub fn tag(self) -> &'static str {
        match self {
            Source::Main => "main",
            Source::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    ExternalTrain,
    Test,
}

/// One corpus row.
#[derive(Debug, Clone, PartialEq)]
pub struct MemeSample {
    pub id: String,
    pub text: String,
    pub image: ImageRef,
    pub labels: Option<LabelVector>,
    pub source: Source,
}

impl MemeSample {
    /// Identity used for collision checks across sources: `<source>:<id>`.
    pub fn key(&self) -> String {
        format!("{}:{}", self.source.tag(), self.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MemeSample>,
    pub split_tag: SplitTag,
}

impl Dataset {
    /// Build a dataset, rejecting repeated `<source>:<id>` keys.
    pub fn new(samples: Vec<MemeSample>, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.key()) {
                return Err(Error::DuplicateId(s.key()));
            }
        }
        Ok(Dataset { samples, split_tag })
    }

    pub fn empty(split_tag: SplitTag) -> Self {
        Dataset {
            samples: Vec::new(),
            split_tag,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.labels.is_some())
    }

    /// Fraction of labeled samples positive for each task, canonical order.
    pub fn label_prevalence(&self) -> Prevalence {
        let mut counts = [0usize; 5];
        let mut n = 0usize;
        for labels in self.samples.iter().filter_map(|s| s.labels) {
            n += 1;
            for t in Task::ALL {
                if labels.get(t) {
                    counts[t.index()] += 1;
                }
            }
        }
        let rates = counts.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 });
        Prevalence { counts, rates, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prevalence {
    pub counts: [usize; 5],
    pub rates: [f64; 5],
    pub n: usize,
}

impl Prevalence {
    pub fn rate(&self, task: Task) -> f64 {
        self.rates[task.index()]
    }
}

impl fmt::Display for Prevalence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>8} {:>10}", "category", "samples", "percentage")?;
        for t in Task::ALL {
            writeln!(
                f,
                "{:<16} {:>8} {:>9.1}%",
                t.name(),
                self.counts[t.index()],
                100.0 * self.rates[t.index()]
            )?;
        }
        Ok(())
    }
}

pub fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// A parsed TSV: canonical column positions plus the data lines.
struct Table<'a> {
    columns: Vec<usize>,
    width: usize,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn parse_table<'a>(contents: &'a str, path: &Path, required: &[&str]) -> Result<Table<'a>> {
    let mut lines = contents.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r'),
        None => {
            return Err(Error::MissingColumn {
                column: required[0].to_string(),
                path: path.to_path_buf(),
            })
        }
    };
    let header: Vec<&str> = header.split('\t').map(str::trim).collect();
    let mut columns = Vec::with_capacity(required.len());
    for &name in required {
        let pos = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
            })?;
        columns.push(pos);
    }
    let extra: Vec<&str> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| !columns.contains(i))
        .map(|(_, h)| *h)
        .collect();
    if !extra.is_empty() {
        warn!("{}: ignoring extra columns {:?}", path.display(), extra);
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != header.len() {
            return Err(Error::Parse {
                row: idx + 1,
                message: format!("expected {} cells, found {}", header.len(), cells.len()),
            });
        }
        rows.push((idx + 1, cells));
    }
    Ok(Table {
        columns,
        width: header.len(),
        rows,
    })
}

fn parse_binary(cell: &str, row: usize, column: &str) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            row,
            message: format!("column `{column}` holds `{other}`, expected 0 or 1"),
        }),
    }
}

fn image_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Load the main corpus TSV. Image file names are resolved against the
/// directory holding the TSV; images are not opened here.
pub fn load_main_corpus(path: &Path, labeled: bool) -> Result<Dataset> {
    let contents = read_file(path)?;
    let mut required = vec!["file_name", "text"];
    if labeled {
        required.extend(Task::ALL.iter().map(|t| t.name()));
    }
    let table = parse_table(&contents, path, &required)?;
    debug_assert!(table.width >= required.len());
    let dir = image_dir(path);

    let mut samples = Vec::with_capacity(table.rows.len());
    let mut seen = HashSet::with_capacity(table.rows.len());
    let mut violations = Vec::new();
    for (row, cells) in &table.rows {
        let id = cells[table.columns[0]].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row: *row,
                message: "empty file_name".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let text: String = unescape_text(cells[table.columns[1]]).nfc().collect();
        let labels = if labeled {
            let mut bits = [false; 5];
            for t in Task::ALL {
                bits[t.index()] = parse_binary(cells[table.columns[2 + t.index()]], *row, t.name())?;
            }
            let labels = LabelVector::new(bits);
            if !labels.validate_hierarchy() {
                violations.push(*row);
            }
            Some(labels)
        } else {
            None
        };
        samples.push(MemeSample {
            image: ImageRef::File(dir.join(&id)),
            id,
            text,
            labels,
            source: Source::Main,
        });
    }
    if !violations.is_empty() {
        return Err(Error::HierarchyViolation { rows: violations });
    }
    let tag = if labeled { SplitTag::Train } else { SplitTag::Test };
    Ok(Dataset {
        samples,
        split_tag: tag,
    })
}

/// Serialize a dataset in the main-corpus layout. Labels are written when
/// every sample carries them.
pub fn serialize_main_corpus(dataset: &Dataset) -> String {
    let labeled = !dataset.is_empty() && dataset.is_fully_labeled();
    let mut out = String::from("file_name\ttext");
    if labeled {
        for t in Task::ALL {
            out.push('\t');
            out.push_str(t.name());
        }
    }
    out.push('\n');
    for s in &dataset.samples {
        out.push_str(&s.id);
        out.push('\t');
        out.push_str(&escape_text(&s.text));
        if let (true, Some(l)) = (labeled, s.labels) {
            for t in Task::ALL {
                out.push_str(if l.get(t) { "\t1" } else { "\t0" });
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_main_corpus(dataset: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &serialize_main_corpus(dataset))
}

/// Which `offense_level` tokens count as negatives for the misogyny task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffenseFilter {
    pub keep: Vec<String>,
    pub drop: Vec<String>,
}

impl Default for OffenseFilter {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        OffenseFilter {
            keep: s(&[
                "not_offensive",
                "slight",
                "slightly_offensive",
                "slight_offensive",
            ]),
            drop: s(&[
                "offensive",
                "very_offensive",
                "hateful",
                "hateful_offensive",
            ]),
        }
    }
}

fn normalize_level(token: &str) -> String {
    token
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelClass {
    Keep,
    Drop,
    Unknown,
}

impl OffenseFilter {
    pub fn classify(&self, token: &str) -> LevelClass {
        let norm = normalize_level(token);
        if self.keep.iter().any(|k| normalize_level(k) == norm) {
            LevelClass::Keep
        } else if self.drop.iter().any(|k| normalize_level(k) == norm) {
            LevelClass::Drop
        } else {
            LevelClass::Unknown
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub row: usize,
    pub id: String,
    pub reason: String,
}

/// Outcome of loading the external pool.
#[derive(Debug, Clone)]
pub struct ExternalLoad {
    pub dataset: Dataset,
    pub dropped: usize,
    pub rejects: Vec<Reject>,
}

impl ExternalLoad {
    /// Plain-text rejects report: one skipped row per line.
    pub fn rejects_report(&self) -> String {
        self.rejects
            .iter()
            .map(|r| format!("row {}\t{}\t{}\n", r.row, r.id, r.reason))
            .collect()
    }

    pub fn total_rows(&self) -> usize {
        self.dataset.len() + self.dropped + self.rejects.len()
    }
}

/// Load the external pool, keeping only rows whose offense level marks them
/// as non-misogynous; those become all-negative samples.
pub fn load_external_negatives(path: &Path, filter: &OffenseFilter) -> Result<ExternalLoad> {
    let contents = read_file(path)?;
    let table = parse_table(&contents, path, &["file_name", "text", "offense_level"])?;
    let dir = image_dir(path);

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = 0;
    let mut rejects = Vec::new();
    for (row, cells) in &table.rows {
        let id = cells[table.columns[0]].trim().to_string();
        let level = cells[table.columns[2]];
        match filter.classify(level) {
            LevelClass::Keep => {}
            LevelClass::Drop => {
                dropped += 1;
                continue;
            }
            LevelClass::Unknown => {
                rejects.push(Reject {
                    row: *row,
                    id,
                    reason: format!("unknown offense_level `{}`", level.trim()),
                });
                continue;
            }
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(format!("external:{id}")));
        }
        samples.push(MemeSample {
            image: ImageRef::File(dir.join(&id)),
            text: unescape_text(cells[table.columns[1]]).nfc().collect(),
            id,
            labels: Some(LabelVector::NEGATIVE),
            source: Source::External,
        });
    }
    if samples.is_empty() {
        warn!("{}: no external rows passed the offense filter", path.display());
    }
    Ok(ExternalLoad {
        dataset: Dataset {
            samples,
            split_tag: SplitTag::ExternalTrain,
        },
        dropped,
        rejects,
    })
}

/// Concatenate `a` then `b`. Keys (`<source>:<id>`) must stay unique.
pub fn merge_datasets(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    let samples: Vec<MemeSample> = a.samples.iter().chain(&b.samples).cloned().collect();
    Dataset::new(samples, a.split_tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    const HEADER: &str =
        "file_name\ttext\tmisogynous\tshaming\tstereotype\tobjectification\tviolence\n";

    #[test]
    fn four_row_fixture_prevalence() {
        let dir = TempDir::new().unwrap();
        let body = format!(
            "{HEADER}a.jpg\tone\t1\t1\t0\t0\t0\nb.jpg\ttwo\t0\t0\t0\t0\t0\nc.jpg\tthree\t1\t0\t1\t0\t0\nd.jpg\tfour\t1\t0\t0\t0\t1\n"
        );
        let ds = load_main_corpus(&write(&dir, "train.tsv", &body), true).unwrap();
        assert_eq!(ds.len(), 4);
        let p = ds.label_prevalence();
        assert_eq!(p.rate(Task::Misogynous), 0.75);
        assert_eq!(p.rate(Task::Violence), 0.25);
        assert_eq!(p.counts, [3, 1, 1, 0, 1]);
        assert_eq!(ds.samples[0].source, Source::Main);
        assert_eq!(ds.samples[2].image, ImageRef::File(dir.path().join("c.jpg")));
    }

    #[test]
    fn header_only_is_empty() {
        let dir = TempDir::new().unwrap();
        let ds = load_main_corpus(&write(&dir, "t.tsv", HEADER), true).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn missing_column_is_named() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "t.tsv",
            "file_name\ttext\tmisogynous\tshaming\tstereotype\tviolence\n",
        );
        match load_main_corpus(&p, true) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "objectification"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_binary_cell_reports_row() {
        let dir = TempDir::new().unwrap();
        let body = format!("{HEADER}a.jpg\tx\t1\t0\t0\t0\t0\nb.jpg\ty\t1\t2\t0\t0\t0\n");
        match load_main_corpus(&write(&dir, "t.tsv", &body), true) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_file_name_rejected() {
        let dir = TempDir::new().unwrap();
        let body = format!("{HEADER}a.jpg\tx\t0\t0\t0\t0\t0\na.jpg\ty\t0\t0\t0\t0\t0\n");
        assert!(matches!(
            load_main_corpus(&write(&dir, "t.tsv", &body), true),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn hierarchy_violation_aborts_with_rows() {
        let dir = TempDir::new().unwrap();
        let body = format!(
            "{HEADER}a.jpg\tx\t0\t1\t0\t0\t0\nb.jpg\ty\t1\t1\t0\t0\t0\nc.jpg\tz\t0\t0\t0\t0\t1\n"
        );
        match load_main_corpus(&write(&dir, "t.tsv", &body), true) {
            Err(Error::HierarchyViolation { rows }) => assert_eq!(rows, vec![2, 4]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn case_insensitive_columns_and_extras() {
        let dir = TempDir::new().unwrap();
        let body = "FILE_NAME\tNotes\tText\n1.jpg\tignored\thello\n";
        let ds = load_main_corpus(&write(&dir, "t.tsv", body), false).unwrap();
        assert_eq!(ds.samples[0].text, "hello");
        assert_eq!(ds.samples[0].labels, None);
        assert_eq!(ds.split_tag, SplitTag::Test);
    }

    #[test]
    fn text_is_nfc_normalized() {
        let dir = TempDir::new().unwrap();
        // "e" + combining acute accent
        let body = "file_name\ttext\n1.jpg\tcafe\u{301}\n";
        let ds = load_main_corpus(&write(&dir, "t.tsv", body), false).unwrap();
        assert_eq!(ds.samples[0].text, "caf\u{e9}");
    }

    #[test]
    fn external_fixture_filtering() {
        let dir = TempDir::new().unwrap();
        let body = "file_name\ttext\toffense_level\n\
                    1.jpg\ta\tnot_offensive\n2.jpg\tb\tslight\n3.jpg\tc\thateful\n\
                    4.jpg\td\tSlight\n5.jpg\te\tNot Offensive\n";
        let ext = load_external_negatives(&write(&dir, "e.tsv", body), &OffenseFilter::default())
            .unwrap();
        assert_eq!(ext.dataset.len(), 4);
        assert_eq!(ext.dropped, 1);
        assert!(ext.rejects.is_empty());
        assert!(ext
            .dataset
            .samples
            .iter()
            .all(|s| s.source == Source::External && s.labels == Some(LabelVector::NEGATIVE)));
    }

    #[test]
    fn external_all_dropped_and_unknown_rejected() {
        let dir = TempDir::new().unwrap();
        let body = "file_name\ttext\toffense_level\n1.jpg\ta\tvery_offensive\n2.jpg\tb\tvery_offensive\n";
        let ext = load_external_negatives(&write(&dir, "e.tsv", body), &OffenseFilter::default())
            .unwrap();
        assert!(ext.dataset.is_empty());
        assert_eq!(ext.dropped, 2);

        let body = "file_name\ttext\toffense_level\n1.jpg\ta\tspicy\n2.jpg\tb\tslight\n";
        let ext = load_external_negatives(&write(&dir, "e2.tsv", body), &OffenseFilter::default())
            .unwrap();
        assert_eq!(ext.dataset.len(), 1);
        assert_eq!(ext.rejects.len(), 1);
        assert_eq!(ext.rejects[0].row, 2);
        assert!(ext.rejects_report().contains("spicy"));
    }

    fn sample(id: &str, source: Source) -> MemeSample {
        MemeSample {
            id: id.into(),
            text: String::new(),
            image: ImageRef::File(PathBuf::from(id)),
            labels: Some(LabelVector::NEGATIVE),
            source,
        }
    }

    #[test]
    fn merge_preserves_order_and_prefixes_sources() {
        let a = Dataset::new(vec![sample("1", Source::Main), sample("2", Source::Main)], SplitTag::Train)
            .unwrap();
        let b = Dataset::new(vec![sample("1", Source::External)], SplitTag::ExternalTrain).unwrap();
        let m = merge_datasets(&a, &b).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.samples[2].key(), "external:1");

        let empty = Dataset::empty(SplitTag::ExternalTrain);
        assert_eq!(merge_datasets(&a, &empty).unwrap(), a);

        assert!(matches!(merge_datasets(&a, &a), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn escape_roundtrip_examples() {
        let s = "tab\there\nnew\\line\r";
        assert_eq!(unescape_text(&escape_text(s)), s);
        assert!(!escape_text(s).contains('\t'));
    }
}
