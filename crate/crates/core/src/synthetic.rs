//! A deterministic stand-in for a chat-completions model.
//!
//! [`synthetic_answers`] reads a rendered audit prompt, finds the sentence of
//! the summary that best matches each question's keywords, and answers `Yes`
//! quoting that sentence verbatim, or `No` when nothing matches. It is not a
//! clinical model; it exists so the whole pipeline can run offline.
//!
//! [`SyntheticServer`] serves it over HTTP in the OpenAI-compatible shape,
//! with scripted faults for exercising retries and repairs.

use std::collections::{BTreeSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use crate::prompt::{extract_summary, SUMMARY_CLOSE};
use crate::server::BackgroundServer;

const STOPWORDS: &[&str] = &[
    "about", "after", "before", "being", "clearly", "described", "document", "documented",
    "during", "explicitly", "given", "included", "information", "listed", "mentioned",
    "other", "patient", "patients", "provided", "specified", "stated", "summary", "there",
    "their", "these", "those", "which", "whether", "where", "while", "within",
];

const STEM_LEN: usize = 6;

fn keywords(question: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    question
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.chars().count() >= 5 && !STOPWORDS.contains(&w.as_str()))
        .map(|w| w.chars().take(STEM_LEN).collect::<String>())
        .filter(|stem| seen.insert(stem.clone()))
        .collect()
}

fn sentences(summary: &str) -> Vec<&str> {
    summary
        .lines()
        .flat_map(|line| line.split(". "))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn question_lines(prompt: &str) -> Vec<(&str, &str)> {
    let tail = prompt
        .rfind(SUMMARY_CLOSE)
        .map(|i| &prompt[i + SUMMARY_CLOSE.len()..])
        .unwrap_or(prompt);
    tail.lines()
        .filter_map(|line| {
            let rest = line.strip_prefix('[')?;
            let (id, text) = rest.split_once("] ")?;
            (!id.is_empty() && !id.contains(' ')).then_some((id, text))
        })
        .collect()
}

/// Answers every `[id] question` line of a rendered prompt as JSON.
pub fn synthetic_answers(prompt: &str) -> String {
    let summary = extract_summary(prompt).unwrap_or("");
    let candidates: Vec<(&str, String)> = sentences(summary)
        .into_iter()
        .map(|s| (s, s.to_lowercase()))
        .collect();
    let answers: Vec<Value> = question_lines(prompt)
        .into_iter()
        .map(|(id, text)| {
            let kws = keywords(text);
            let needed = if kws.len() > 1 { 2 } else { 1 };
            let mut best: Option<(&str, &String, Vec<&str>)> = None;
            for (sentence, lower) in &candidates {
                let hits: Vec<&str> = kws.iter().map(String::as_str).filter(|k| lower.contains(k)).collect();
                let better = best.as_ref().is_none_or(|(_, _, b)| hits.len() > b.len());
                if hits.len() >= needed && better {
                    best = Some((sentence, lower, hits));
                }
            }
            match best {
                Some((sentence, lower, hits)) => {
                    let verdict = if lower.contains("unknown") || lower.contains("unclear") {
                        "Unclear"
                    } else {
                        "Yes"
                    };
                    json!({
                        "question_id": id,
                        "verdict": verdict,
                        "evidence": [sentence],
                        "justification": format!("matched terms: {}", hits.join(", ")),
                    })
                }
                None => json!({
                    "question_id": id,
                    "verdict": "No",
                    "evidence": [],
                    "justification": "no matching statement in the summary",
                }),
            }
        })
        .collect();
    json!({ "answers": answers }).to_string()
}

/// A scripted misbehaviour, consumed by one request each.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    /// Reply with this HTTP status and an error body.
    Status(u16),
    /// Reply 200 with content that is not parseable as answers.
    Garbled,
    /// Wait before answering normally.
    Delay(Duration),
}

#[derive(Default)]
struct Shared {
    requests: AtomicUsize,
    faults: Mutex<VecDeque<Fault>>,
    authorizations: Mutex<Vec<Option<String>>>,
}

/// The synthetic model served on a loopback port, on its own thread.
pub struct SyntheticServer {
    server: BackgroundServer,
    shared: Arc<Shared>,
}

impl SyntheticServer {
    /// Binds an ephemeral loopback port and starts serving.
    pub fn start() -> std::io::Result<Self> {
        let shared = Arc::new(Shared::default());
        let app = Router::new()
            .route("/v1/chat/completions", post(complete))
            .with_state(shared.clone());
        Ok(Self {
            server: BackgroundServer::start(app)?,
            shared,
        })
    }

    /// The chat-completions URL to configure clients with.
    pub fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.server.base_url())
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Queues faults; each subsequent request consumes the next one.
    pub fn inject(&self, faults: impl IntoIterator<Item = Fault>) {
        self.shared.faults.lock().unwrap().extend(faults);
    }

    /// `Authorization` headers seen so far, in arrival order.
    pub fn authorizations(&self) -> Vec<Option<String>> {
        self.shared.authorizations.lock().unwrap().clone()
    }
}

async fn complete(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = shared.requests.fetch_add(1, Ordering::SeqCst) + 1;
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    shared.authorizations.lock().unwrap().push(auth);
    let fault = shared.faults.lock().unwrap().pop_front();
    let prompt = body
        .pointer("/messages/0/content")
        .and_then(Value::as_str)
        .unwrap_or("");
    let content = match fault {
        Some(Fault::Status(code)) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            return (status, Json(json!({"error": {"message": "injected fault"}}))).into_response();
        }
        Some(Fault::Garbled) => "I am unable to comply with the format right now.".to_string(),
        Some(Fault::Delay(d)) => {
            tokio::time::sleep(d).await;
            synthetic_answers(prompt)
        }
        None => synthetic_answers(prompt),
    };
    let model = body.get("model").cloned().unwrap_or(Value::Null);
    Json(json!({
        "id": format!("synthetic-{n}"),
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    }))
    .into_response()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checklist::AuditChecklist;
    use crate::cohort::{DischargeRecord, Gender};
    use crate::prompt::{build_prompts, PromptBudget, PromptTemplate};
    use crate::response::{parse_content, Verdict};

    fn record(text: &str) -> DischargeRecord {
        DischargeRecord {
            note_id: "n1".into(),
            subject_id: "s1".into(),
            hadm_id: "h1".into(),
            text: text.into(),
            age: 60,
            gender: Gender::Female,
            discharge_location: "HOME".into(),
            icu_stay: false,
            icu_los: None,
            admission_los: 3.0,
            died_in_hospital: false,
        }
    }

    #[test]
    fn answers_cover_every_question_and_quote_verbatim() {
        let checklist = AuditChecklist::discharged();
        let text = "Primary care provider contact: Dr. ___, phone ___-___-____.\nAllergies: penicillin (rash).";
        let prompts = build_prompts(&record(text), &checklist, &PromptTemplate::default(), PromptBudget::default()).unwrap();
        for p in &prompts {
            let content = synthetic_answers(&p.rendered_text);
            let answers = parse_content("n1", &content, &p.question_ids);
            assert_eq!(answers.len(), p.question_ids.len());
            for a in &answers {
                assert!(a.flags.is_empty(), "{a:?}");
                for e in &a.evidence {
                    assert!(text.contains(e.as_str()));
                }
            }
        }
        let e = prompts.iter().find(|p| p.question_ids.iter().any(|q| q == "E.01")).unwrap();
        let answers = parse_content("n1", &synthetic_answers(&e.rendered_text), &e.question_ids);
        let pcp = answers.iter().find(|a| a.question_id == "E.01").unwrap();
        assert_eq!(pcp.verdict, Verdict::Yes);
    }

    #[test]
    fn question_lines_ignore_summary_brackets() {
        let prompt = "<<<SUMMARY\n[X.1] not a question\nSUMMARY>>>\n\nQUESTIONS (1):\n[A.01] Is it there?\n";
        assert_eq!(question_lines(prompt), vec![("A.01", "Is it there?")]);
    }
}
