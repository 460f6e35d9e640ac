//! Append-only JSONL run logs with a schema header line.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::answer::OptionLabel;
use crate::critic::FailurePattern;
use crate::error::{Error, Result};

pub const LOG_SCHEMA: &str = "credit-loom/v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
}

/// Prompt versions in force when a record was written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct VersionStamp {
    pub roles: BTreeMap<String, u32>,
    pub aggregators: BTreeMap<u32, u32>,
}

/// One evaluated question: the debate's final answer, its correctness, the
/// round where that answer first appeared, and the critic's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub instance_id: String,
    pub final_answer: OptionLabel,
    pub correct: bool,
    pub decided_round: u32,
    pub pattern: FailurePattern,
    pub score: u8,
    pub versions: VersionStamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Writes the header on creation (or validates it when appending to an
/// existing file), then appends one JSON object per record.
pub struct LogWriter {
    file: File,
    path: String,
}

impl LogWriter {
    /// Creates or truncates `path` and writes the schema header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let header = serde_json::to_string(&Header {
            schema: LOG_SCHEMA.to_string(),
        })
        .expect("header serializes");
        writeln!(file, "{header}").map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(LogWriter {
            file,
            path: path.display().to_string(),
        })
    }

    /// Opens `path` for appending; a fresh file gets the header, an existing
    /// one must already carry it.
    pub fn append(path: &Path) -> Result<Self> {
        let exists = path.exists()
            && std::fs::metadata(path)
                .map(|m| m.len() > 0)
                .unwrap_or(false);
        if !exists {
            return Self::create(path);
        }
        let first = {
            let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            BufReader::new(file)
                .lines()
                .next()
                .transpose()
                .map_err(|e| Error::io(path.display().to_string(), e))?
                .unwrap_or_default()
        };
        validate_header(&first)?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(LogWriter {
            file,
            path: path.display().to_string(),
        })
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.file, "{line}").map_err(|e| Error::io(self.path.clone(), e))
    }

    pub fn write_all(&mut self, records: &[LogRecord]) -> Result<()> {
        for record in records {
            self.write(record)?;
        }
        Ok(())
    }
}

fn validate_header(line: &str) -> Result<()> {
    let header: Header = serde_json::from_str(line).map_err(|_| Error::SchemaMismatch {
        expected: LOG_SCHEMA.to_string(),
        got: line.chars().take(80).collect(),
    })?;
    if header.schema != LOG_SCHEMA {
        return Err(Error::SchemaMismatch {
            expected: LOG_SCHEMA.to_string(),
            got: header.schema,
        });
    }
    Ok(())
}

/// Convenience: append `records` to `path`, creating it if needed.
pub fn append_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    LogWriter::append(path)?.write_all(records)
}

/// Reads every record in write order. A corrupt or truncated line aborts the
/// read with [`Error::CorruptLine`], which carries the records recovered
/// before the damage.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let first = lines
        .next()
        .map(|(_, l)| l)
        .transpose()
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .unwrap_or_default();
    validate_header(&first)?;

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(&line) {
            Ok(record) => records.push(record),
            Err(_) => {
                return Err(Error::CorruptLine {
                    line: idx + 1,
                    recovered: records,
                })
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, correct: bool) -> LogRecord {
        LogRecord {
            instance_id: id.to_string(),
            final_answer: if correct {
                OptionLabel::B
            } else {
                OptionLabel::C
            },
            correct,
            decided_round: 1,
            pattern: if correct {
                FailurePattern::None
            } else {
                FailurePattern::KnowledgeDeficit
            },
            score: if correct { 5 } else { 1 },
            versions: VersionStamp::default(),
            category: None,
        }
    }

    #[test]
    fn write_then_read_roundtrips_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let records = vec![record("a", true), record("b", false), record("c", true)];
        append_log(&path, &records[..2]).unwrap();
        append_log(&path, &records[2..]).unwrap();
        assert_eq!(read_log(&path).unwrap(), records);
    }

    #[test]
    fn missing_header_is_a_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "not a header\n").unwrap();
        assert!(matches!(read_log(&path), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn truncated_final_line_recovers_preceding_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        append_log(&path, &[record("a", true), record("b", false)]).unwrap();
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        write!(file, "{{\"instance_id\":\"c\",\"final_ans").unwrap();
        drop(file);

        match read_log(&path) {
            Err(Error::CorruptLine { line, recovered }) => {
                assert_eq!(line, 4, "header + two records precede the damage");
                assert_eq!(recovered, vec![record("a", true), record("b", false)]);
            }
            other => panic!("expected CorruptLine, got {other:?}"),
        }
    }
}
