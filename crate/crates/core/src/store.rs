//! Append-only JSON-lines persistence for audit results and reviewer
//! adjudications.
//!
//! Records are only ever appended. A later record for the same key supersedes
//! an earlier one when reading back, so nothing is rewritten in place.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{AuditResult, Verdict};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const ADJUDICATIONS_FILE: &str = "adjudications.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line} is corrupt: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// One audited note as persisted, tagged with the run that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredResult {
    pub run_id: String,
    #[serde(flatten)]
    pub result: AuditResult,
}

/// A reviewer's verdict on one question of one note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub note_id: String,
    pub question_id: String,
    pub verdict: Verdict,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A JSON-lines file of `T` records.
#[derive(Debug, Clone)]
pub struct JsonlLog<T> {
    path: PathBuf,
    _marker: PhantomData<fn() -> T>,
}

pub type ResultStore = JsonlLog<StoredResult>;
pub type AdjudicationLog = JsonlLog<Adjudication>;

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            _marker: PhantomData,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io_err(&self, source: std::io::Error) -> StoreError {
        StoreError::Io {
            path: self.path.display().to_string(),
            source,
        }
    }

    /// Appends records, one line each, flushing before returning.
    pub fn append(&self, records: &[T]) -> Result<(), StoreError> {
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r)?);
            buf.push('\n');
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| self.io_err(e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| self.io_err(e))?;
        f.write_all(buf.as_bytes()).map_err(|e| self.io_err(e))?;
        f.flush().map_err(|e| self.io_err(e))
    }

    /// Streams records back. Each item is a separate `Result` so a corrupt
    /// line does not hide the ones before it. A missing file reads as empty.
    pub fn iter(&self) -> Result<impl Iterator<Item = Result<T, StoreError>> + use<T>, StoreError> {
        let path = self.path.display().to_string();
        let reader = match File::open(&self.path) {
            Ok(f) => Some(BufReader::new(f)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(self.io_err(e)),
        };
        let lines = reader.into_iter().flat_map(|r| r.lines()).enumerate();
        Ok(lines.filter_map(move |(i, line)| {
            let line_no = i + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(StoreError::Corrupt {
                        path: path.clone(),
                        line: line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                return None;
            }
            Some(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: line_no,
                message: e.to_string(),
            }))
        }))
    }

    /// Reads every record, failing on the first corrupt line.
    pub fn load(&self) -> Result<Vec<T>, StoreError> {
        self.iter()?.collect()
    }
}

impl ResultStore {
    pub fn find(&self, note_id: &str, run_id: &str) -> Result<Option<StoredResult>, StoreError> {
        Ok(self
            .load()?
            .into_iter()
            .rev()
            .find(|r| r.result.note_id == note_id && r.run_id == run_id))
    }

    /// Number of runs already stored for a note.
    pub fn run_count(&self, note_id: &str) -> Result<usize, StoreError> {
        Ok(self.load()?.iter().filter(|r| r.result.note_id == note_id).count())
    }
}

/// The most recent stored result for each note, optionally limited to one
/// run, ordered by note id.
pub fn latest_per_note(records: Vec<StoredResult>, run_id: Option<&str>) -> Vec<StoredResult> {
    let mut latest: BTreeMap<String, StoredResult> = BTreeMap::new();
    for r in records {
        if run_id.is_some_and(|id| id != r.run_id) {
            continue;
        }
        latest.insert(r.result.note_id.clone(), r);
    }
    latest.into_values().collect()
}

/// Collapses adjudications to one per (note, question, annotator); the last
/// one written wins. Ordered by that key.
pub fn current_adjudications(records: Vec<Adjudication>) -> Vec<Adjudication> {
    let mut current: BTreeMap<(String, String, String), Adjudication> = BTreeMap::new();
    for a in records {
        current.insert(
            (a.note_id.clone(), a.question_id.clone(), a.annotator_id.clone()),
            a,
        );
    }
    current.into_values().collect()
}
