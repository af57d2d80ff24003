//! The audit instrument: components, questions and the prompt-batch layout.
//!
//! A checklist is loaded from a JSON document and validated once; after that it
//! is immutable and can be shared freely between audit workers. The shipped
//! DISCHARGED instrument is embedded in the crate and available through
//! [`AuditChecklist::discharged`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of questions allowed in a single prompt batch.
pub const MAX_BATCH_SIZE: usize = 9;

/// Profile name that enables the DISCHARGED conformance checks.
pub const DISCHARGED_PROFILE: &str = "DISCHARGED";

/// Component codes and question counts of the DISCHARGED instrument, in mnemonic order.
pub const DISCHARGED_LAYOUT: [(&str, usize); 10] = [
    ("D1", 3),
    ("I", 3),
    ("S", 2),
    ("C", 4),
    ("H", 8),
    ("A", 8),
    ("R", 6),
    ("G", 1),
    ("E", 3),
    ("D2", 8),
];

/// Number of prompt batches used by the DISCHARGED instrument.
pub const DISCHARGED_BATCH_COUNT: u32 = 6;

const DISCHARGED_JSON: &str = include_str!("../data/discharged_v46.json");

#[derive(Debug, Error)]
pub enum ChecklistError {
    #[error("failed to read checklist {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checklist: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid checklist: {0}")]
    Validation(#[from] ValidationError),
    #[error("unknown question id {0:?}")]
    NotFound(String),
}

/// The first invariant a checklist document violates.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("empty field: {0}")]
    EmptyField(String),
    #[error("duplicate component code {0:?}")]
    DuplicateComponent(String),
    #[error("question {question:?} references unknown component {component:?}")]
    UnknownComponent { question: String, component: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("count mismatch: components declare {declared} questions, found {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("count mismatch: component {component:?} declares {declared} questions, found {found}")]
    ComponentCountMismatch {
        component: String,
        declared: usize,
        found: usize,
    },
    #[error("non-partition: question {question:?} has batch_id {batch_id} outside 1..={batch_count}")]
    BatchOutOfRange {
        question: String,
        batch_id: u32,
        batch_count: u32,
    },
    #[error("non-partition: batch {0} has no questions")]
    EmptyBatch(u32),
    #[error("batch exceeds {max}: batch {batch_id} has {size} questions", max = MAX_BATCH_SIZE)]
    BatchTooLarge { batch_id: u32, size: usize },
    #[error("profile mismatch: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub code: String,
    pub title: String,
    pub expected_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditQuestion {
    pub id: String,
    pub component: String,
    pub topic: String,
    pub text: String,
    pub batch_id: u32,
    /// Display name used in cohort reports; optional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditChecklist {
    pub name: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
    pub batch_count: u32,
    pub components: Vec<Component>,
    pub questions: Vec<AuditQuestion>,
}

/// One prompt's worth of questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Batch<'a> {
    pub batch_id: u32,
    pub questions: Vec<&'a AuditQuestion>,
}

impl AuditChecklist {
    /// Reads and validates a checklist file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ChecklistError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ChecklistError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, ChecklistError> {
        let checklist: AuditChecklist = serde_json::from_str(raw)?;
        checklist.validate()?;
        Ok(checklist)
    }

    /// The embedded 46-question DISCHARGED instrument.
    pub fn discharged() -> Self {
        Self::from_json(DISCHARGED_JSON).expect("embedded checklist is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checklist serializes")
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        for (field, value) in [("name", &self.name), ("version", &self.version)] {
            if value.trim().is_empty() {
                return Err(ValidationError::EmptyField(field.to_string()));
            }
        }

        let mut codes = HashSet::new();
        for c in &self.components {
            if c.code.trim().is_empty() {
                return Err(ValidationError::EmptyField("component code".into()));
            }
            if !codes.insert(c.code.as_str()) {
                return Err(ValidationError::DuplicateComponent(c.code.clone()));
            }
        }

        let mut ids = HashSet::new();
        for q in &self.questions {
            if q.id.trim().is_empty() {
                return Err(ValidationError::EmptyField("question id".into()));
            }
            if q.text.trim().is_empty() {
                return Err(ValidationError::EmptyField(format!("text of {}", q.id)));
            }
            if q.topic.trim().is_empty() {
                return Err(ValidationError::EmptyField(format!("topic of {}", q.id)));
            }
            if !codes.contains(q.component.as_str()) {
                return Err(ValidationError::UnknownComponent {
                    question: q.id.clone(),
                    component: q.component.clone(),
                });
            }
            if !ids.insert(q.id.as_str()) {
                return Err(ValidationError::DuplicateId(q.id.clone()));
            }
        }

        let declared: usize = self.components.iter().map(|c| c.expected_count).sum();
        if declared != self.questions.len() {
            return Err(ValidationError::CountMismatch {
                declared,
                found: self.questions.len(),
            });
        }
        let mut per_component: HashMap<&str, usize> = HashMap::new();
        for q in &self.questions {
            *per_component.entry(q.component.as_str()).or_default() += 1;
        }
        for c in &self.components {
            let found = per_component.get(c.code.as_str()).copied().unwrap_or(0);
            if found != c.expected_count {
                return Err(ValidationError::ComponentCountMismatch {
                    component: c.code.clone(),
                    declared: c.expected_count,
                    found,
                });
            }
        }

        let mut sizes: BTreeMap<u32, usize> = (1..=self.batch_count).map(|b| (b, 0)).collect();
        for q in &self.questions {
            match sizes.get_mut(&q.batch_id) {
                Some(n) => *n += 1,
                None => {
                    return Err(ValidationError::BatchOutOfRange {
                        question: q.id.clone(),
                        batch_id: q.batch_id,
                        batch_count: self.batch_count,
                    })
                }
            }
        }
        for (&batch_id, &size) in &sizes {
            if size == 0 {
                return Err(ValidationError::EmptyBatch(batch_id));
            }
            if size > MAX_BATCH_SIZE {
                return Err(ValidationError::BatchTooLarge { batch_id, size });
            }
        }

        if self.profile.as_deref() == Some(DISCHARGED_PROFILE) {
            self.check_discharged_profile()?;
        }
        Ok(())
    }

    fn check_discharged_profile(&self) -> Result<(), ValidationError> {
        let layout: Vec<(&str, usize)> = self
            .components
            .iter()
            .map(|c| (c.code.as_str(), c.expected_count))
            .collect();
        if layout != DISCHARGED_LAYOUT {
            return Err(ValidationError::Profile(format!(
                "expected components {DISCHARGED_LAYOUT:?}, found {layout:?}"
            )));
        }
        if self.batch_count != DISCHARGED_BATCH_COUNT {
            return Err(ValidationError::Profile(format!(
                "expected {DISCHARGED_BATCH_COUNT} batches, found {}",
                self.batch_count
            )));
        }
        Ok(())
    }

    /// Questions grouped by batch, sorted by batch id, checklist order within a batch.
    pub fn batch_partition(&self) -> Vec<Batch<'_>> {
        let mut batches: BTreeMap<u32, Vec<&AuditQuestion>> = BTreeMap::new();
        for q in &self.questions {
            batches.entry(q.batch_id).or_default().push(q);
        }
        batches
            .into_iter()
            .map(|(batch_id, questions)| Batch {
                batch_id,
                questions,
            })
            .collect()
    }

    pub fn question(&self, id: &str) -> Result<&AuditQuestion, ChecklistError> {
        self.questions
            .iter()
            .find(|q| q.id == id)
            .ok_or_else(|| ChecklistError::NotFound(id.to_string()))
    }

    pub fn component(&self, code: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.code == code)
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.questions.iter().map(|q| q.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

impl fmt::Display for AuditChecklist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} ({}): {} components, {} questions, {} batches",
            self.name,
            self.version,
            self.components.len(),
            self.questions.len(),
            self.batch_count
        )?;
        for c in &self.components {
            writeln!(f, "  {:<3} {:<32} {}", c.code, c.title, c.expected_count)?;
        }
        Ok(())
    }
}
