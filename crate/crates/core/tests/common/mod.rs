//! Fixtures and independent reference implementations shared by the
//! integration tests. Oracles here deliberately avoid the library code they
//! are used to check.

#![allow(dead_code)]

use std::path::PathBuf;

use discharge_audit::checklist::{AuditChecklist, AuditQuestion, Component};
use discharge_audit::cohort::{DischargeRecord, Gender, SplitMix64};
use discharge_audit::response::{assemble_result, AuditAnswer, AuditResult, Verdict};
use proptest::prelude::*;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn record(note_id: &str, text: &str) -> DischargeRecord {
    DischargeRecord {
        note_id: note_id.into(),
        subject_id: format!("s-{note_id}"),
        hadm_id: format!("h-{note_id}"),
        text: text.into(),
        age: 60,
        gender: Gender::Female,
        discharge_location: "HOME".into(),
        icu_stay: false,
        icu_los: None,
        admission_los: 4.0,
        died_in_hospital: false,
    }
}

pub fn answer(note_id: &str, question_id: &str, verdict: Verdict) -> AuditAnswer {
    AuditAnswer {
        note_id: note_id.into(),
        question_id: question_id.into(),
        verdict,
        evidence: Vec::new(),
        evidence_verified: Vec::new(),
        justification: String::new(),
        flags: Default::default(),
    }
}

/// Rows of the 200-note verdict fixture: (note id, one Y/N/U char per question).
pub fn verdict_rows() -> Vec<(String, String)> {
    let mut rdr = csv::Reader::from_path(fixture("cohort/verdicts.csv")).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string())
        })
        .collect()
}

pub fn verdict_of(c: char) -> Verdict {
    match c {
        'Y' => Verdict::Yes,
        'N' => Verdict::No,
        'U' => Verdict::Unclear,
        other => panic!("bad verdict char {other:?}"),
    }
}

/// Turns one fixture row into the result the pipeline would have produced.
pub fn result_from_row(note_id: &str, verdicts: &str, checklist: &AuditChecklist) -> AuditResult {
    let answers = checklist
        .questions
        .iter()
        .zip(verdicts.chars())
        .map(|(q, c)| answer(note_id, &q.id, verdict_of(c)))
        .collect();
    assemble_result(note_id, answers, checklist).unwrap()
}

/// Collapses whitespace runs to one space and trims, char by char.
pub fn oracle_normalize(s: &str) -> Vec<char> {
    let mut out: Vec<char> = Vec::new();
    let mut gap = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            gap = !out.is_empty();
            continue;
        }
        if gap {
            out.push(' ');
            gap = false;
        }
        out.push(ch);
    }
    out
}

/// Tries every alignment of the normalized needle against the normalized
/// haystack.
pub fn oracle_contains(haystack: &str, needle: &str) -> bool {
    let h = oracle_normalize(haystack);
    let n = oracle_normalize(needle);
    if n.is_empty() || n.len() > h.len() {
        return false;
    }
    (0..=h.len() - n.len()).any(|start| (0..n.len()).all(|k| h[start + k] == n[k]))
}

/// Cohen's kappa straight from the labelled pairs.
pub fn oracle_kappa(pairs: &[(Verdict, Verdict)]) -> f64 {
    let n = pairs.len() as f64;
    let observed = pairs.iter().filter(|(g, p)| g == p).count() as f64 / n;
    let expected: f64 = Verdict::ALL
        .iter()
        .map(|v| {
            let g = pairs.iter().filter(|(g, _)| g == v).count() as f64 / n;
            let p = pairs.iter().filter(|(_, p)| p == v).count() as f64 / n;
            g * p
        })
        .sum();
    if expected == 1.0 {
        1.0
    } else {
        (observed - expected) / (1.0 - expected)
    }
}

pub fn verdict_strategy() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::Yes), Just(Verdict::No), Just(Verdict::Unclear)]
}

/// Valid checklists with up to 100 questions: components and batches are
/// nonempty, every batch holds at most nine questions.
pub fn checklist_strategy() -> impl Strategy<Value = AuditChecklist> {
    (1usize..=100)
        .prop_flat_map(|n| {
            let min_batches = n.div_ceil(9);
            (Just(n), min_batches..=n.min(min_batches + 6), 1usize..=n.min(12))
        })
        .prop_flat_map(|(n, batches, components)| {
            (
                Just(n),
                Just(batches),
                Just(components),
                any::<u64>().prop_map(move |seed| {
                    let mut rng = SplitMix64::new(seed);
                    let mut below = |n: usize| (rng.next_u64() % n as u64) as usize;
                    // Batch sizes: one each, then spread the rest with the 9 cap.
                    let mut sizes = vec![1usize; batches];
                    let mut left = n - batches;
                    while left > 0 {
                        let b = below(batches);
                        if sizes[b] < 9 {
                            sizes[b] += 1;
                            left -= 1;
                        }
                    }
                    let mut comp = vec![1usize; components];
                    for _ in 0..n - components {
                        comp[below(components)] += 1;
                    }
                    let mut batch_of: Vec<u32> = sizes
                        .iter()
                        .enumerate()
                        .flat_map(|(b, &s)| std::iter::repeat_n(b as u32 + 1, s))
                        .collect();
                    // Shuffle so batches do not line up with components.
                    for i in (1..batch_of.len()).rev() {
                        batch_of.swap(i, below(i + 1));
                    }
                    (comp, batch_of)
                }),
            )
        })
        .prop_map(|(_, batches, _, (comp, batch_of))| {
            let components: Vec<Component> = comp
                .iter()
                .enumerate()
                .map(|(i, &count)| Component {
                    code: format!("K{i}"),
                    title: format!("Component {i}"),
                    expected_count: count,
                })
                .collect();
            let mut questions = Vec::new();
            let mut k = 0;
            for (ci, &count) in comp.iter().enumerate() {
                for j in 0..count {
                    questions.push(AuditQuestion {
                        id: format!("K{ci}.{:02}", j + 1),
                        component: format!("K{ci}"),
                        topic: format!("topic {ci}"),
                        text: format!("Is item {j} of component {ci} documented?"),
                        batch_id: batch_of[k],
                        report_label: None,
                    });
                    k += 1;
                }
            }
            AuditChecklist {
                name: "generated".into(),
                version: "gen.v1".into(),
                profile: None,
                notice: None,
                batch_count: batches as u32,
                components,
                questions,
            }
        })
}

/// In-process backend answering with the keyword model, no HTTP involved.
pub struct KeywordBackend;

impl discharge_audit::inference::InferenceBackend for KeywordBackend {
    fn kind(&self) -> discharge_audit::inference::BackendKind {
        discharge_audit::inference::BackendKind::Live
    }

    fn complete(
        &self,
        batch: &discharge_audit::prompt::PromptBatch,
    ) -> Result<discharge_audit::inference::RawResponse, discharge_audit::inference::InferenceError> {
        Ok(discharge_audit::inference::RawResponse {
            note_id: batch.note_id.clone(),
            batch_id: batch.batch_id,
            content: discharge_audit::synthetic::synthetic_answers(&batch.rendered_text),
            latency_ms: 0,
            attempt_count: 1,
            backend: discharge_audit::inference::BackendKind::Live,
        })
    }
}

pub fn keyword_context() -> discharge_audit::pipeline::AuditContext {
    use std::sync::Arc;
    discharge_audit::pipeline::AuditContext::new(
        Arc::new(AuditChecklist::discharged()),
        Arc::new(discharge_audit::inference::InferenceClient::new(Box::new(KeywordBackend), 4)),
    )
}
