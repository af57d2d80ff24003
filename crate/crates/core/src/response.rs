//! Turning raw model output into verified per-question answers.
//!
//! Parsing never fails: every expected question gets exactly one answer, and
//! anything that cannot be read becomes `Unclear` with a flag saying why.
//!
//! Verdict tokens are normalized by trimming whitespace, stripping surrounding
//! quotes, asterisks, brackets and trailing punctuation, and lowercasing:
//!
//! | token                                                     | verdict   |
//! |-----------------------------------------------------------|-----------|
//! | `yes`, `y`                                                | `Yes`     |
//! | `no`, `n`                                                 | `No`      |
//! | `unclear`, `uncertain`, `unknown`, `ambiguous`, `unsure`  | `Unclear` |
//!
//! When the whole token is not in the table its first word is tried, so
//! `"Yes, documented"` reads as `Yes`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::checklist::AuditChecklist;
use crate::inference::RawResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
    Unclear,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Yes, Verdict::No, Verdict::Unclear];

    pub fn index(self) -> usize {
        match self {
            Verdict::Yes => 0,
            Verdict::No => 1,
            Verdict::Unclear => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "Yes",
            Verdict::No => "No",
            Verdict::Unclear => "Unclear",
        }
    }

    /// Lenient reading of a model's verdict token.
    pub fn normalize(raw: &str) -> Option<Verdict> {
        let cleaned = raw
            .trim()
            .trim_matches(|c: char| "\"'`*[]()".contains(c) || c.is_whitespace())
            .trim_end_matches(|c: char| ".,;:!".contains(c))
            .trim()
            .to_ascii_lowercase();
        let lookup = |s: &str| match s {
            "yes" | "y" => Some(Verdict::Yes),
            "no" | "n" => Some(Verdict::No),
            "unclear" | "uncertain" | "unknown" | "ambiguous" | "unsure" => Some(Verdict::Unclear),
            _ => None,
        };
        lookup(&cleaned).or_else(|| {
            let first = cleaned
                .split(|c: char| !c.is_ascii_alphabetic())
                .find(|w| !w.is_empty())?;
            // Single letters only count as the whole token.
            if first.len() > 1 {
                lookup(first)
            } else {
                None
            }
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid verdict {0:?}; expected Yes, No or Unclear")]
pub struct InvalidVerdict(pub String);

impl FromStr for Verdict {
    type Err = InvalidVerdict;

    /// Strict parse used for clinician input: the three tokens, any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(Verdict::Yes),
            "no" => Ok(Verdict::No),
            "unclear" => Ok(Verdict::Unclear),
            _ => Err(InvalidVerdict(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFlag {
    ParseFailure,
    Downgraded,
    MissingInResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditAnswer {
    pub note_id: String,
    pub question_id: String,
    pub verdict: Verdict,
    pub evidence: Vec<String>,
    pub evidence_verified: Vec<bool>,
    pub justification: String,
    pub flags: BTreeSet<AnswerFlag>,
}

impl AuditAnswer {
    fn unreadable(note_id: &str, question_id: &str, missing: bool) -> Self {
        let mut flags = BTreeSet::from([AnswerFlag::ParseFailure]);
        if missing {
            flags.insert(AnswerFlag::MissingInResponse);
        }
        Self {
            note_id: note_id.to_string(),
            question_id: question_id.to_string(),
            verdict: Verdict::Unclear,
            evidence: Vec::new(),
            evidence_verified: Vec::new(),
            justification: String::new(),
            flags,
        }
    }

    pub fn has_flag(&self, flag: AnswerFlag) -> bool {
        self.flags.contains(&flag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyMode {
    /// A `Yes` without any verified evidence becomes `Unclear`.
    #[default]
    Strict,
    /// Verification is recorded but verdicts are left alone.
    Lenient,
}

struct Harvested {
    verdict: Option<Verdict>,
    evidence: Vec<String>,
    justification: String,
}

const ID_KEYS: [&str; 4] = ["question_id", "id", "qid", "question"];
const VERDICT_KEYS: [&str; 3] = ["verdict", "answer", "label"];
const EVIDENCE_KEYS: [&str; 3] = ["evidence", "evidence_sentences", "quotes"];
const JUSTIFICATION_KEYS: [&str; 4] = ["justification", "reason", "rationale", "explanation"];

fn canonical_id(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| "[]\"'`*".contains(c))
        .trim()
        .to_ascii_lowercase()
}

fn first_key<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

fn harvest_object(
    obj: &serde_json::Map<String, Value>,
    id_hint: Option<&str>,
    out: &mut Vec<(String, Harvested)>,
) {
    let id = match first_key(obj, &ID_KEYS) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => id_hint.map(str::to_string),
    };
    let Some(id) = id else { return };
    let verdict = match first_key(obj, &VERDICT_KEYS) {
        Some(Value::String(s)) => Verdict::normalize(s),
        Some(Value::Bool(b)) => Some(if *b { Verdict::Yes } else { Verdict::No }),
        _ => None,
    };
    let evidence = match first_key(obj, &EVIDENCE_KEYS) {
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str())
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
            .collect(),
        _ => Vec::new(),
    };
    let justification = match first_key(obj, &JUSTIFICATION_KEYS) {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    };
    out.push((
        id,
        Harvested {
            verdict,
            evidence,
            justification,
        },
    ));
}

fn harvest_value(value: &Value, expected: &HashMap<String, &str>, out: &mut Vec<(String, Harvested)>) {
    match value {
        Value::Array(items) => {
            for item in items {
                if let Value::Object(obj) = item {
                    harvest_object(obj, None, out);
                }
            }
        }
        Value::Object(obj) => {
            if let Some(inner) = ["answers", "results", "questions"]
                .iter()
                .find_map(|k| obj.get(*k).filter(|v| v.is_array()))
            {
                harvest_value(inner, expected, out);
            } else if first_key(obj, &ID_KEYS).is_some() {
                harvest_object(obj, None, out);
            } else {
                // Keyed by question id: {"H.01": {...}} or {"H.01": "Yes"}.
                for (key, v) in obj {
                    if !expected.contains_key(&canonical_id(key)) {
                        continue;
                    }
                    match v {
                        Value::Object(inner) => harvest_object(inner, Some(key), out),
                        Value::String(s) => out.push((
                            key.clone(),
                            Harvested {
                                verdict: Verdict::normalize(s),
                                evidence: Vec::new(),
                                justification: String::new(),
                            },
                        )),
                        _ => {}
                    }
                }
            }
        }
        _ => {}
    }
}

/// Every JSON value embedded in `content`, scanning left to right.
fn embedded_json(content: &str) -> Vec<Value> {
    let mut values = Vec::new();
    let mut pos = 0;
    while let Some(offset) = content[pos..].find(['{', '[']) {
        let start = pos + offset;
        let mut stream = serde_json::Deserializer::from_str(&content[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) => {
                values.push(v);
                pos = start + stream.byte_offset().max(1);
            }
            _ => pos = start + 1,
        }
    }
    values
}

struct Fallback {
    keyed: Regex,
    leading: Regex,
    quoted: Regex,
    justification: Regex,
}

static FALLBACK: LazyLock<Fallback> = LazyLock::new(Fallback::new);

impl Fallback {
    fn new() -> Self {
        let token = r"(yes|no|unclear|uncertain|unknown|ambiguous)";
        Self {
            keyed: Regex::new(&format!(r#"(?i)\b(?:verdict|answer)\b\W{{0,6}}{token}\b"#)).unwrap(),
            leading: Regex::new(&format!(r#"(?i)^[\s\]\)"'*:=>\-\.]{{0,8}}{token}\b"#)).unwrap(),
            quoted: Regex::new(r#""([^"\n]{3,})""#).unwrap(),
            justification: Regex::new(r#"(?i)\bjustification\b\W{0,6}([^\n"]+)"#).unwrap(),
        }
    }
}

fn id_positions(content: &str, id: &str) -> Vec<usize> {
    let lower = content.to_ascii_lowercase();
    let needle = id.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'.' || b == b'_';
    lower
        .match_indices(&needle)
        .map(|(i, _)| i)
        .filter(|&i| {
            let before_ok = i == 0 || !is_word(bytes[i - 1]);
            let end = i + needle.len();
            // A trailing '.' is sentence punctuation unless a word character follows.
            let after_ok = end >= bytes.len()
                || !is_word(bytes[end])
                || (bytes[end] == b'.' && bytes.get(end + 1).is_none_or(|b| !is_word(*b)));
            before_ok && after_ok
        })
        .collect()
}

fn fallback_answers(content: &str, expected_ids: &[String]) -> HashMap<String, Option<Harvested>> {
    let rx = &*FALLBACK;
    let mut marks: Vec<(usize, usize, &str)> = Vec::new();
    for id in expected_ids {
        for pos in id_positions(content, id) {
            marks.push((pos, pos + id.len(), id.as_str()));
        }
    }
    marks.sort();
    let mut found: HashMap<String, Option<Harvested>> = HashMap::new();
    for (i, &(_, end, id)) in marks.iter().enumerate() {
        if found.get(id).is_some_and(Option::is_some) {
            continue;
        }
        let seg_end = marks.get(i + 1).map_or(content.len(), |m| m.0);
        let segment = &content[end..seg_end.max(end)];
        let verdict = rx
            .keyed
            .captures(segment)
            .or_else(|| rx.leading.captures(segment))
            .and_then(|c| Verdict::normalize(&c[1]));
        let harvested = verdict.map(|v| {
            let evidence = segment
                .to_ascii_lowercase()
                .find("evidence")
                .map(|at| {
                    rx.quoted
                        .captures_iter(&segment[at..])
                        .map(|c| c[1].to_string())
                        .filter(|s| !s.eq_ignore_ascii_case("evidence"))
                        .take_while(|s| !s.eq_ignore_ascii_case("justification"))
                        .collect()
                })
                .unwrap_or_default();
            let justification = rx
                .justification
                .captures(segment)
                .map(|c| c[1].trim().to_string())
                .unwrap_or_default();
            Harvested {
                verdict: Some(v),
                evidence,
                justification,
            }
        });
        found.insert(id.to_string(), harvested);
    }
    found
}

/// One answer per expected id, in the given order.
///
/// Structured JSON is read first (a single object, an `answers` array, one
/// object per line, or objects keyed by id). Only when no structured answer is
/// found at all does the line-pattern fallback run.
pub fn parse_response(raw: &RawResponse, expected_ids: &[String]) -> Vec<AuditAnswer> {
    parse_content(&raw.note_id, &raw.content, expected_ids)
}

pub fn parse_content(note_id: &str, content: &str, expected_ids: &[String]) -> Vec<AuditAnswer> {
    let expected: HashMap<String, &str> = expected_ids
        .iter()
        .map(|id| (canonical_id(id), id.as_str()))
        .collect();

    let mut harvested = Vec::new();
    for value in embedded_json(content) {
        harvest_value(&value, &expected, &mut harvested);
    }
    let mut structured: HashMap<&str, Harvested> = HashMap::new();
    for (id, h) in harvested {
        if let Some(&canon) = expected.get(&canonical_id(&id)) {
            structured.entry(canon).or_insert(h);
        }
    }

    let mut fallback = if structured.is_empty() {
        fallback_answers(content, expected_ids)
    } else {
        HashMap::new()
    };

    expected_ids
        .iter()
        .map(|id| {
            let (h, seen) = match structured.remove(id.as_str()) {
                Some(h) => (Some(h), true),
                None => match fallback.remove(id) {
                    Some(h) => (h, true),
                    None => (None, false),
                },
            };
            match h {
                Some(Harvested {
                    verdict: Some(verdict),
                    evidence,
                    justification,
                }) => AuditAnswer {
                    note_id: note_id.to_string(),
                    question_id: id.clone(),
                    verdict,
                    evidence_verified: vec![false; evidence.len()],
                    evidence,
                    justification,
                    flags: BTreeSet::new(),
                },
                Some(Harvested {
                    verdict: None,
                    evidence,
                    justification,
                }) => {
                    let mut a = AuditAnswer::unreadable(note_id, id, false);
                    a.evidence_verified = vec![false; evidence.len()];
                    a.evidence = evidence;
                    a.justification = justification;
                    a
                }
                None => AuditAnswer::unreadable(note_id, id, !seen),
            }
        })
        .collect()
}

/// Text with whitespace runs collapsed to one space and the ends trimmed,
/// remembering where each byte came from in the original.
#[derive(Debug, Clone)]
pub struct NormalizedText {
    pub text: String,
    origin: Vec<usize>,
}

impl NormalizedText {
    pub fn new(source: &str) -> Self {
        let mut text = String::with_capacity(source.len());
        let mut origin = Vec::with_capacity(source.len());
        let mut pending_space: Option<usize> = None;
        for (i, ch) in source.char_indices() {
            if ch.is_whitespace() {
                if !text.is_empty() && pending_space.is_none() {
                    pending_space = Some(i);
                }
                continue;
            }
            if let Some(at) = pending_space.take() {
                text.push(' ');
                origin.push(at);
            }
            let start = text.len();
            text.push(ch);
            origin.extend(std::iter::repeat_n(i, text.len() - start));
        }
        Self { text, origin }
    }

    /// Byte span in the original text of the first match of `needle`.
    pub fn locate(&self, needle: &str) -> Option<(usize, usize)> {
        let needle = normalize_whitespace(needle);
        if needle.is_empty() {
            return None;
        }
        let start = self.text.find(&needle)?;
        let last = start + needle.len() - 1;
        let last_char_len = self.text[..=last]
            .chars()
            .next_back()
            .map_or(1, char::len_utf8);
        // `last` may sit inside a multi-byte char; walk to its first byte.
        let last_start = self.text.floor_char_boundary(last);
        let end = self.origin[last_start] + last_char_len;
        Some((self.origin[start], end - self.origin[start]))
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whether `evidence` occurs in `source` after whitespace normalization.
/// Case-sensitive; placeholder runs compare literally; empty evidence never matches.
pub fn evidence_matches(normalized_source: &str, evidence: &str) -> bool {
    let needle = normalize_whitespace(evidence);
    !needle.is_empty() && normalized_source.contains(&needle)
}

/// Byte span in `source` matched by `evidence`, using the verifier's normalization.
pub fn locate_evidence(source: &str, evidence: &str) -> Option<(usize, usize)> {
    NormalizedText::new(source).locate(evidence)
}

pub fn verify_evidence(answer: &AuditAnswer, source_text: &str, mode: VerifyMode) -> AuditAnswer {
    verify_against(answer, &normalize_whitespace(source_text), mode)
}

/// [`verify_evidence`] with the source already normalized.
pub fn verify_against(answer: &AuditAnswer, normalized_source: &str, mode: VerifyMode) -> AuditAnswer {
    let mut out = answer.clone();
    out.evidence_verified = out
        .evidence
        .iter()
        .map(|e| evidence_matches(normalized_source, e))
        .collect();
    if mode == VerifyMode::Strict
        && out.verdict == Verdict::Yes
        && !out.evidence_verified.iter().any(|&v| v)
    {
        out.verdict = Verdict::Unclear;
        out.flags.insert(AnswerFlag::Downgraded);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub component: String,
    pub yes: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub note_id: String,
    pub checklist_version: String,
    pub completeness_score: usize,
    pub yes: usize,
    pub no: usize,
    pub unclear: usize,
    pub per_component: Vec<ComponentScore>,
    pub answers: Vec<AuditAnswer>,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

impl AuditResult {
    /// A placeholder for a note that could not be audited.
    pub fn skipped(note_id: &str, checklist_version: &str, reason: impl Into<String>) -> Self {
        Self {
            note_id: note_id.to_string(),
            checklist_version: checklist_version.to_string(),
            completeness_score: 0,
            yes: 0,
            no: 0,
            unclear: 0,
            per_component: Vec::new(),
            answers: Vec::new(),
            skipped: true,
            skip_reason: Some(reason.into()),
        }
    }

    pub fn answer(&self, question_id: &str) -> Option<&AuditAnswer> {
        self.answers.iter().find(|a| a.question_id == question_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("answers do not cover the checklist: missing {missing:?}, duplicated {duplicated:?}, unknown {unknown:?}")]
pub struct CoverageError {
    pub missing: Vec<String>,
    pub duplicated: Vec<String>,
    pub unknown: Vec<String>,
}

/// Rolls one note's answers up into a scored result, in checklist order.
pub fn assemble_result(
    note_id: &str,
    answers: Vec<AuditAnswer>,
    checklist: &AuditChecklist,
) -> Result<AuditResult, CoverageError> {
    let mut by_id: HashMap<String, AuditAnswer> = HashMap::new();
    let mut duplicated = Vec::new();
    let mut unknown = Vec::new();
    for a in answers {
        if checklist.question(&a.question_id).is_err() {
            unknown.push(a.question_id.clone());
            continue;
        }
        if by_id.contains_key(&a.question_id) {
            duplicated.push(a.question_id.clone());
            continue;
        }
        by_id.insert(a.question_id.clone(), a);
    }
    let missing: Vec<String> = checklist
        .question_ids()
        .filter(|id| !by_id.contains_key(*id))
        .map(str::to_string)
        .collect();
    if !(missing.is_empty() && duplicated.is_empty() && unknown.is_empty()) {
        return Err(CoverageError {
            missing,
            duplicated,
            unknown,
        });
    }

    let mut ordered = Vec::with_capacity(checklist.len());
    let mut counts = [0usize; 3];
    let mut per_component: Vec<ComponentScore> = checklist
        .components
        .iter()
        .map(|c| ComponentScore {
            component: c.code.clone(),
            yes: 0,
            total: 0,
        })
        .collect();
    for q in &checklist.questions {
        let a = by_id.remove(&q.id).expect("coverage checked");
        counts[a.verdict.index()] += 1;
        if let Some(slot) = per_component.iter_mut().find(|c| c.component == q.component) {
            slot.total += 1;
            if a.verdict == Verdict::Yes {
                slot.yes += 1;
            }
        }
        ordered.push(a);
    }
    Ok(AuditResult {
        note_id: note_id.to_string(),
        checklist_version: checklist.version.clone(),
        completeness_score: counts[0],
        yes: counts[0],
        no: counts[1],
        unclear: counts[2],
        per_component,
        answers: ordered,
        skipped: false,
        skip_reason: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("H.{i:02}")).collect()
    }

    fn answer_json(id: &str, verdict: &str, evidence: &str) -> String {
        format!(
            r#"{{"question_id":"{id}","verdict":"{verdict}","evidence":["{evidence}"],"justification":"stated"}}"#
        )
    }

    #[test]
    fn well_formed_answers_have_no_flags() {
        let body: Vec<String> = ids(8).iter().map(|id| answer_json(id, "Yes", "x")).collect();
        let content = format!(r#"{{"answers":[{}]}}"#, body.join(","));
        let out = parse_content("n", &content, &ids(8));
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|a| a.flags.is_empty() && a.verdict == Verdict::Yes));
        assert_eq!(out[3].evidence, vec!["x".to_string()]);
        assert_eq!(out[3].justification, "stated");
    }

    #[test]
    fn missing_answer_becomes_flagged_unclear() {
        let body: Vec<String> = ids(7).iter().map(|id| answer_json(id, "No", "")).collect();
        let content = format!(r#"{{"answers":[{}]}}"#, body.join(","));
        let out = parse_content("n", &content, &ids(8));
        assert_eq!(out.len(), 8);
        let last = &out[7];
        assert_eq!(last.verdict, Verdict::Unclear);
        assert!(last.has_flag(AnswerFlag::MissingInResponse));
        assert!(last.has_flag(AnswerFlag::ParseFailure));
        assert!(out[..7].iter().all(|a| a.flags.is_empty()));
    }

    #[test]
    fn verdict_token_variants() {
        for raw in ["YES", "yes ", "Yes.", "\"Yes\"", "**Yes**", "y", "Yes, it is documented"] {
            assert_eq!(Verdict::normalize(raw), Some(Verdict::Yes), "{raw:?}");
        }
        for raw in ["No", "NO.", " no", "n", "No information provided"] {
            assert_eq!(Verdict::normalize(raw), Some(Verdict::No), "{raw:?}");
        }
        for raw in ["Unclear", "unclear;", "Uncertain", "UNKNOWN", "ambiguous!"] {
            assert_eq!(Verdict::normalize(raw), Some(Verdict::Unclear), "{raw:?}");
        }
        for raw in ["", "maybe", "documented", "n/a"] {
            assert_eq!(Verdict::normalize(raw), None, "{raw:?}");
        }
    }

    #[test]
    fn truncated_json_keeps_complete_objects() {
        let content = format!(
            r#"```json
{{"answers":[{},{},{{"question_id":"H.03","verd"#,
            answer_json("H.01", "Yes", "a"),
            answer_json("H.02", "No", "")
        );
        let out = parse_content("n", &content, &ids(3));
        assert_eq!(out[0].verdict, Verdict::Yes);
        assert_eq!(out[1].verdict, Verdict::No);
        assert!(out[2].has_flag(AnswerFlag::MissingInResponse));
    }

    #[test]
    fn json_lines_and_keyed_objects() {
        let lines = format!("{}\n{}", answer_json("H.01", "No", ""), answer_json("H.02", "Unclear", ""));
        let out = parse_content("n", &lines, &ids(2));
        assert_eq!((out[0].verdict, out[1].verdict), (Verdict::No, Verdict::Unclear));

        let keyed = r#"{"H.01": {"verdict": "yes", "evidence": "Seen."}, "H.02": "no"}"#;
        let out = parse_content("n", keyed, &ids(2));
        assert_eq!(out[0].verdict, Verdict::Yes);
        assert_eq!(out[0].evidence, vec!["Seen.".to_string()]);
        assert_eq!(out[1].verdict, Verdict::No);
    }

    #[test]
    fn unreadable_verdict_is_parse_failure_not_missing() {
        let content = answer_json("H.01", "probably", "quote");
        let out = parse_content("n", &content, &ids(1));
        assert_eq!(out[0].verdict, Verdict::Unclear);
        assert!(out[0].has_flag(AnswerFlag::ParseFailure));
        assert!(!out[0].has_flag(AnswerFlag::MissingInResponse));
        assert_eq!(out[0].evidence, vec!["quote".to_string()]);
    }

    #[test]
    fn plain_text_fallback() {
        let content = "H.01: Yes\nEvidence: \"Vitals stable.\"\nJustification: vitals listed\n\
                       H.02 - verdict: No\nH.03 The history is long; answer: unclear";
        let out = parse_content("n", content, &ids(4));
        assert_eq!(out[0].verdict, Verdict::Yes);
        assert_eq!(out[0].evidence, vec!["Vitals stable.".to_string()]);
        assert_eq!(out[0].justification, "vitals listed");
        assert_eq!(out[1].verdict, Verdict::No);
        assert_eq!(out[2].verdict, Verdict::Unclear);
        assert!(out[2].flags.is_empty());
        assert!(out[3].has_flag(AnswerFlag::MissingInResponse));
    }

    #[test]
    fn fallback_ignores_prefix_ids() {
        let expected = vec!["H.01".to_string(), "H.010".to_string()];
        let out = parse_content("n", "H.010: No\n", &expected);
        assert!(out[0].has_flag(AnswerFlag::MissingInResponse));
        assert_eq!(out[1].verdict, Verdict::No);
    }

    fn yes_with(evidence: &[&str]) -> AuditAnswer {
        AuditAnswer {
            note_id: "n".into(),
            question_id: "H.01".into(),
            verdict: Verdict::Yes,
            evidence: evidence.iter().map(|s| s.to_string()).collect(),
            evidence_verified: vec![false; evidence.len()],
            justification: String::new(),
            flags: BTreeSet::new(),
        }
    }

    #[test]
    fn verbatim_and_masked_evidence_verifies() {
        let source = "Name:  ___   Unit No: ___\nPatient is a 58 year old\n male.";
        let a = verify_evidence(
            &yes_with(&["Patient is a 58 year old male", "Name: ___"]),
            source,
            VerifyMode::Strict,
        );
        assert_eq!(a.evidence_verified, vec![true, true]);
        assert_eq!(a.verdict, Verdict::Yes);
    }

    #[test]
    fn fabricated_evidence_downgrades_in_strict_mode_only() {
        let source = "Patient is a 58 year old male.";
        let fabricated = "PCP phone number is 555-0100";
        assert!(!source.contains(fabricated));
        let a = yes_with(&[fabricated]);
        let strict = verify_evidence(&a, source, VerifyMode::Strict);
        assert_eq!(strict.verdict, Verdict::Unclear);
        assert!(strict.has_flag(AnswerFlag::Downgraded));
        let lenient = verify_evidence(&a, source, VerifyMode::Lenient);
        assert_eq!(lenient.verdict, Verdict::Yes);
        assert_eq!(lenient.evidence_verified, vec![false]);
    }

    #[test]
    fn case_matters_and_empty_evidence_never_matches() {
        let n = normalize_whitespace("Patient denies tobacco use.");
        assert!(!evidence_matches(&n, "patient denies tobacco"));
        assert!(!evidence_matches(&n, "   "));
    }

    #[test]
    fn locate_maps_back_to_source_bytes() {
        let source = "  Allergies:\n\tPenicillin   (rash).  ";
        let (start, len) = locate_evidence(source, "Allergies: Penicillin (rash).").unwrap();
        assert_eq!(&source[start..start + len], "Allergies:\n\tPenicillin   (rash).");
        let source = "Température élevée à 39°C.";
        let (start, len) = locate_evidence(source, "élevée à 39°C").unwrap();
        assert_eq!(&source[start..start + len], "élevée à 39°C");
    }

    #[test]
    fn assemble_counts_and_components() {
        let checklist = AuditChecklist::discharged();
        let answers: Vec<AuditAnswer> = checklist
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| AuditAnswer {
                verdict: if i < 24 {
                    Verdict::Yes
                } else if i < 34 {
                    Verdict::No
                } else {
                    Verdict::Unclear
                },
                question_id: q.id.clone(),
                ..yes_with(&[])
            })
            .collect();
        let r = assemble_result("n", answers.clone(), &checklist).unwrap();
        assert_eq!((r.completeness_score, r.yes, r.no, r.unclear), (24, 24, 10, 12));
        let totals: usize = r.per_component.iter().map(|c| c.total).sum();
        assert_eq!(totals, 46);
        let h = r.per_component.iter().find(|c| c.component == "H").unwrap();
        assert_eq!((h.yes, h.total), (8, 8));

        let mut dup = answers.clone();
        dup.push(answers[0].clone());
        assert_eq!(
            assemble_result("n", dup, &checklist).unwrap_err().duplicated,
            vec!["D1.01".to_string()]
        );
        let short = answers[1..].to_vec();
        assert_eq!(
            assemble_result("n", short, &checklist).unwrap_err().missing,
            vec!["D1.01".to_string()]
        );
    }

    #[test]
    fn all_yes_scores_full() {
        let checklist = AuditChecklist::discharged();
        let answers = checklist
            .questions
            .iter()
            .map(|q| AuditAnswer {
                question_id: q.id.clone(),
                ..yes_with(&[])
            })
            .collect();
        assert_eq!(assemble_result("n", answers, &checklist).unwrap().completeness_score, 46);
    }

    #[test]
    fn strict_verdict_parse() {
        assert_eq!("yes".parse::<Verdict>(), Ok(Verdict::Yes));
        assert_eq!("UNCLEAR".parse::<Verdict>(), Ok(Verdict::Unclear));
        assert!("Maybe".parse::<Verdict>().is_err());
    }
}
