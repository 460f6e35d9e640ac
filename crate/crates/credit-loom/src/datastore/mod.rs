//! Dataset ingestion, split management, logging, and prompt persistence.
//!
//! The dataset wire format is JSONL, one instance per line:
//! `{"id": ..., "question": ..., "options": {"A": .., "B": .., "C": .., "D": ..}, "answer": "A|B|C|D"}`
//! with an optional `"category"` field. Splits are a deterministic function
//! of `(dataset, seed)`: a Fisher–Yates shuffle over ids sorted ascending,
//! driven by a ChaCha8 generator seeded with the split seed, taking the
//! first 100 ids for optimization and the rest for test. The optimization
//! split is the only data prompt search may ever touch.

mod log_file;
mod prompt_store;

pub use log_file::{append_log, read_log, LogRecord, LogWriter, VersionStamp, LOG_SCHEMA};
pub use prompt_store::{load_aggregator_prompts, load_role_prompts, PromptStore};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer::OptionLabel;
use crate::error::{Error, Result};

/// Size of the optimization split when the dataset is large enough.
pub const OPTIMIZATION_SPLIT_SIZE: usize = 100;

/// Name of the shuffle generator, recorded in splits and manifests so the
/// split replicates across implementations.
pub const SPLIT_GENERATOR: &str = "chacha8";

/// The four option texts of one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionTexts {
    #[serde(rename = "A")]
    pub a: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(rename = "C")]
    pub c: String,
    #[serde(rename = "D")]
    pub d: String,
}

impl OptionTexts {
    pub fn new(
        a: impl Into<String>,
        b: impl Into<String>,
        c: impl Into<String>,
        d: impl Into<String>,
    ) -> Self {
        OptionTexts {
            a: a.into(),
            b: b.into(),
            c: c.into(),
            d: d.into(),
        }
    }

    pub fn get(&self, label: OptionLabel) -> Option<&str> {
        match label {
            OptionLabel::A => Some(&self.a),
            OptionLabel::B => Some(&self.b),
            OptionLabel::C => Some(&self.c),
            OptionLabel::D => Some(&self.d),
            OptionLabel::Invalid => None,
        }
    }

    /// The standard `A) ...` rendering used in prompts.
    pub fn block(&self) -> String {
        format!(
            "A) {}\nB) {}\nC) {}\nD) {}\n",
            self.a, self.b, self.c, self.d
        )
    }
}

/// One multiple-choice question with a valid gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub question: String,
    pub options: OptionTexts,
    #[serde(rename = "answer")]
    pub gold: OptionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl TaskInstance {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.instance_id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        for label in OptionLabel::VALID {
            if self.options.get(label).is_some_and(|t| t.trim().is_empty()) {
                return Err(format!("empty option {label}"));
            }
        }
        if !self.gold.is_valid() {
            return Err("answer must be one of A, B, C, D".into());
        }
        Ok(())
    }
}

/// Loads and validates a JSONL dataset; instances come back sorted by id.
pub fn load_dataset(path: &Path) -> Result<Vec<TaskInstance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut instances = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: TaskInstance =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                line: line_no,
                reason: e.to_string(),
            })?;
        instance.validate().map_err(|reason| Error::MalformedRow {
            line: line_no,
            reason,
        })?;
        if !seen.insert(instance.instance_id.clone()) {
            return Err(Error::DuplicateId(instance.instance_id));
        }
        instances.push(instance);
    }
    instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(instances)
}

/// Writes instances back out as JSONL (the normalized form of `ingest`).
pub fn write_dataset(path: &Path, instances: &[TaskInstance]) -> Result<()> {
    let mut out = String::new();
    for instance in instances {
        out.push_str(&serde_json::to_string(instance).expect("instance serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Fixed optimization/test partition of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub optimization_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
    pub generator: String,
}

impl DatasetSplit {
    pub fn is_optimization(&self, id: &str) -> bool {
        self.optimization_ids.contains(id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad split file: {e}")))
    }
}

/// Deterministic split: same `(dataset, seed)` always yields the same id
/// sets. Undersized datasets put all but one instance into the optimization
/// split, with a warning.
pub fn make_splits(dataset: &[TaskInstance], seed: u64) -> Result<DatasetSplit> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    let mut ids: Vec<String> = dataset.iter().map(|i| i.instance_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let opt_size = if ids.len() > OPTIMIZATION_SPLIT_SIZE {
        OPTIMIZATION_SPLIT_SIZE
    } else {
        log::warn!(
            "dataset has only {} instances; taking {} for optimization instead of {}",
            ids.len(),
            ids.len() - 1,
            OPTIMIZATION_SPLIT_SIZE
        );
        ids.len() - 1
    };
    let optimization_ids: BTreeSet<String> = ids[..opt_size].iter().cloned().collect();
    let test_ids: BTreeSet<String> = ids[opt_size..].iter().cloned().collect();
    Ok(DatasetSplit {
        optimization_ids,
        test_ids,
        seed,
        generator: SPLIT_GENERATOR.to_string(),
    })
}

/// Lookup of instances by membership in a split section.
pub fn select_instances<'a>(
    dataset: &'a [TaskInstance],
    ids: &BTreeSet<String>,
) -> Vec<&'a TaskInstance> {
    dataset
        .iter()
        .filter(|i| ids.contains(&i.instance_id))
        .collect()
}

/// Per-gold-label counts, used by `ingest` reporting.
pub fn gold_distribution(dataset: &[TaskInstance]) -> BTreeMap<OptionLabel, usize> {
    let mut counts = BTreeMap::new();
    for instance in dataset {
        *counts.entry(instance.gold).or_default() += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn row(id: &str, gold: &str) -> String {
        format!(
            r#"{{"id":"{id}","question":"q","options":{{"A":"1","B":"2","C":"3","D":"4"}},"answer":"{gold}"}}"#
        )
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn loads_valid_rows_sorted() {
        let f = write_lines(&[row("b", "B"), row("a", "A")]);
        let data = load_dataset(f.path()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].instance_id, "a");
        assert_eq!(data[1].gold, OptionLabel::B);
    }

    #[test]
    fn rejects_missing_option_and_bad_gold() {
        let missing =
            r#"{"id":"x","question":"q","options":{"A":"1","B":"2","C":"3"},"answer":"A"}"#;
        let f = write_lines(&[missing.to_string()]);
        assert!(matches!(
            load_dataset(f.path()),
            Err(Error::MalformedRow { line: 1, .. })
        ));

        let f = write_lines(&[row("x", "E")]);
        assert!(matches!(
            load_dataset(f.path()),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let f = write_lines(&[row("x", "A"), row("x", "B")]);
        assert!(matches!(load_dataset(f.path()), Err(Error::DuplicateId(id)) if id == "x"));
    }

    fn synthetic(n: usize) -> Vec<TaskInstance> {
        (0..n)
            .map(|i| TaskInstance {
                instance_id: format!("q{i:04}"),
                question: "q".into(),
                options: OptionTexts::new("1", "2", "3", "4"),
                gold: OptionLabel::A,
                category: None,
            })
            .collect()
    }

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let data = synthetic(500);
        let s1 = make_splits(&data, 7).unwrap();
        let s2 = make_splits(&data, 7).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.optimization_ids.len(), 100);
        assert_eq!(s1.test_ids.len(), 400);
        assert!(s1.optimization_ids.is_disjoint(&s1.test_ids));

        let s3 = make_splits(&data, 8).unwrap();
        assert_ne!(s1.optimization_ids, s3.optimization_ids);
    }

    #[test]
    fn undersized_dataset_takes_all_but_one() {
        let data = synthetic(10);
        let split = make_splits(&data, 1).unwrap();
        assert_eq!(split.optimization_ids.len(), 9);
        assert_eq!(split.test_ids.len(), 1);
    }

    #[test]
    fn split_roundtrips_through_disk() {
        let data = synthetic(120);
        let split = make_splits(&data, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        split.save(&path).unwrap();
        assert_eq!(DatasetSplit::load(&path).unwrap(), split);
    }
}
