//! Rendering of per-batch audit prompts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checklist::{AuditChecklist, AuditQuestion};
use crate::cohort::DischargeRecord;

const DEFAULT_TEMPLATE: &str = include_str!("../data/prompt_template_v1.txt");

/// Marks the start of the embedded summary in a rendered prompt.
pub const SUMMARY_OPEN: &str = "<<<SUMMARY";
/// Marks the end of the embedded summary in a rendered prompt.
pub const SUMMARY_CLOSE: &str = "SUMMARY>>>";

const DEFAULT_REPAIR: &str = "Your previous response could not be parsed. Reply again with only the JSON object in the required form, with one entry for every question id listed above.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid template: {0}")]
    Template(String),
    #[error("note {0}: summary text is empty")]
    EmptySummary(String),
    #[error("note {note_id}: batch {batch_id} needs ~{estimate} tokens, budget is {limit}")]
    ContextBudget {
        note_id: String,
        batch_id: u32,
        estimate: usize,
        limit: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub system_preamble: String,
    pub answer_schema_instruction: String,
    pub placeholder_notice: String,
    pub per_question_format: String,
    pub repair_instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("embedded template is valid")
    }
}

impl PromptTemplate {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw)
    }

    /// Parses the sectioned text format: `@@ name` lines open a section,
    /// `#` lines before the first section are comments.
    pub fn parse(raw: &str) -> Result<Self, PromptError> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in raw.lines() {
            if let Some(name) = line.strip_prefix("@@ ") {
                let name = name.trim().to_string();
                if sections.contains_key(&name) {
                    return Err(PromptError::Template(format!("duplicate section {name:?}")));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
            } else if let Some(name) = &current {
                sections.get_mut(name).unwrap().push(line);
            } else if !line.starts_with('#') && !line.trim().is_empty() {
                return Err(PromptError::Template(format!(
                    "text outside a section: {line:?}"
                )));
            }
        }
        let mut take = |name: &str| -> Option<String> {
            sections
                .remove(name)
                .map(|lines| lines.join("\n").trim_end().to_string())
        };
        let required = |value: Option<String>, name: &str| {
            value
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| PromptError::Template(format!("missing section {name:?}")))
        };
        let template = Self {
            version: required(take("version"), "version")?,
            system_preamble: required(take("system_preamble"), "system_preamble")?,
            answer_schema_instruction: required(
                take("answer_schema_instruction"),
                "answer_schema_instruction",
            )?,
            placeholder_notice: required(take("placeholder_notice"), "placeholder_notice")?,
            per_question_format: required(take("per_question_format"), "per_question_format")?,
            repair_instruction: take("repair_instruction")
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| DEFAULT_REPAIR.to_string()),
        };
        if let Some(extra) = sections.keys().next() {
            return Err(PromptError::Template(format!("unknown section {extra:?}")));
        }
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for token in ["Yes", "No", "Unclear", "evidence", "justification"] {
            if !self.answer_schema_instruction.contains(token) {
                return Err(PromptError::Template(format!(
                    "answer_schema_instruction must mention {token:?}"
                )));
            }
        }
        for slot in ["{question_id}", "{question_text}"] {
            if !self.per_question_format.contains(slot) {
                return Err(PromptError::Template(format!(
                    "per_question_format must contain {slot}"
                )));
            }
        }
        Ok(())
    }

    fn question_line(&self, q: &AuditQuestion) -> String {
        self.per_question_format
            .replace("{question_id}", &q.id)
            .replace("{topic}", &q.topic)
            .replace("{component}", &q.component)
            .replace("{question_text}", &q.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBatch {
    pub note_id: String,
    pub batch_id: u32,
    pub question_ids: Vec<String>,
    pub rendered_text: String,
    pub token_estimate: usize,
}

/// Upper bound on prompt size, in estimated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub max_prompt_tokens: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        // 32k context minus room for the structured answer.
        Self {
            max_prompt_tokens: 32_768 - 2_048,
        }
    }
}

/// Over-approximate token count: characters divided by three, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(3)
}

/// Byte offset and length of every maximal run of three or more underscores.
pub fn detect_placeholders(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'_' {
            let start = i;
            while i < bytes.len() && bytes[i] == b'_' {
                i += 1;
            }
            if i - start >= 3 {
                out.push((start, i - start));
            }
        } else {
            i += 1;
        }
    }
    out
}

/// One prompt per checklist batch, in batch order.
///
/// Over-budget summaries are rejected as a whole; text is never truncated.
pub fn build_prompts(
    record: &DischargeRecord,
    checklist: &AuditChecklist,
    template: &PromptTemplate,
    budget: PromptBudget,
) -> Result<Vec<PromptBatch>, PromptError> {
    if record.text.trim().is_empty() {
        return Err(PromptError::EmptySummary(record.note_id.clone()));
    }
    let mut prompts = Vec::with_capacity(checklist.batch_count as usize);
    for batch in checklist.batch_partition() {
        let rendered_text = render(&record.text, &batch.questions, template);
        let token_estimate = estimate_tokens(&rendered_text);
        if token_estimate > budget.max_prompt_tokens {
            return Err(PromptError::ContextBudget {
                note_id: record.note_id.clone(),
                batch_id: batch.batch_id,
                estimate: token_estimate,
                limit: budget.max_prompt_tokens,
            });
        }
        prompts.push(PromptBatch {
            note_id: record.note_id.clone(),
            batch_id: batch.batch_id,
            question_ids: batch.questions.iter().map(|q| q.id.clone()).collect(),
            rendered_text,
            token_estimate,
        });
    }
    Ok(prompts)
}

fn render(summary: &str, questions: &[&AuditQuestion], template: &PromptTemplate) -> String {
    let mut out = String::with_capacity(summary.len() + 4096);
    out.push_str(&template.system_preamble);
    out.push_str("\n\n");
    out.push_str(&template.placeholder_notice);
    out.push_str("\n\n");
    out.push_str(&template.answer_schema_instruction);
    out.push_str("\n\nDISCHARGE SUMMARY:\n");
    out.push_str(SUMMARY_OPEN);
    out.push('\n');
    out.push_str(summary);
    out.push('\n');
    out.push_str(SUMMARY_CLOSE);
    out.push_str(&format!("\n\nQUESTIONS ({}):\n", questions.len()));
    for q in questions {
        out.push_str(&template.question_line(q));
        out.push('\n');
    }
    out
}

/// The follow-up prompt sent once when a response cannot be parsed.
pub fn repair_prompt(batch: &PromptBatch, template: &PromptTemplate) -> PromptBatch {
    let rendered_text = format!("{}\n{}\n", batch.rendered_text, template.repair_instruction);
    PromptBatch {
        token_estimate: estimate_tokens(&rendered_text),
        rendered_text,
        ..batch.clone()
    }
}

/// Recovers the summary text embedded in a rendered prompt.
pub fn extract_summary(rendered: &str) -> Option<&str> {
    let start = rendered.find(SUMMARY_OPEN)? + SUMMARY_OPEN.len() + 1;
    let end = rendered.rfind(SUMMARY_CLOSE)?;
    rendered.get(start..end.checked_sub(1)?)
}
