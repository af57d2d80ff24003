//! Delivery of prompts to a chat-completions endpoint, plus a replay backend.
//!
//! The live backend speaks the common chat-completions JSON convention
//! (`POST {model, messages, temperature, max_tokens}`, reply text at
//! `choices[0].message.content`). HTTP 5xx and transport failures are retried
//! with exponential backoff; 4xx responses are terminal.
//!
//! Recordings map a prompt digest to the model's reply. The digest is the
//! SHA-256 of the model name, the temperature and the rendered prompt, each
//! length-prefixed (see [`prompt_digest`]).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::PromptBatch;

pub const ENDPOINT_ENV: &str = "DISCHARGE_AUDIT_ENDPOINT";
pub const TOKEN_ENV: &str = "DISCHARGE_AUDIT_TOKEN";

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("gave up after {attempts} attempt(s): {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("endpoint rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("no recorded response for note {note_id} batch {batch_id} (digest {digest})")]
    ReplayMiss {
        digest: String,
        note_id: String,
        batch_id: u32,
    },
    #[error("recording {path} line {line}: {message}")]
    Recording {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid inference config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl InferenceError {
    /// Failures of the endpoint itself, as opposed to a single prompt.
    pub fn is_infrastructure(&self) -> bool {
        !matches!(self, InferenceError::BadResponse(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "qwen2.5-7b-instruct".into(),
            temperature: 0.0,
            max_output_tokens: 2048,
            timeout_secs: 120,
            max_retries: 3,
            max_concurrency: 4,
            backoff_base_ms: 1000,
            bearer_token: None,
        }
    }
}

impl InferenceConfig {
    /// Applies `DISCHARGE_AUDIT_ENDPOINT` / `DISCHARGE_AUDIT_TOKEN` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.trim().is_empty() {
                self.endpoint_url = url;
            }
        }
        if let Ok(token) = std::env::var(TOKEN_ENV) {
            if !token.trim().is_empty() {
                self.bearer_token = Some(token);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(InferenceError::Config("temperature must be >= 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(InferenceError::Config("max_concurrency must be >= 1".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(InferenceError::Config("model_name is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub note_id: String,
    pub batch_id: u32,
    pub content: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub backend: BackendKind,
}

/// Hex SHA-256 over `len(model) | model | temperature bits | len(text) | text`,
/// lengths as big-endian u64.
pub fn prompt_digest(model_name: &str, temperature: f64, rendered_text: &str) -> String {
    let mut h = Sha256::new();
    h.update((model_name.len() as u64).to_be_bytes());
    h.update(model_name.as_bytes());
    h.update(temperature.to_bits().to_be_bytes());
    h.update((rendered_text.len() as u64).to_be_bytes());
    h.update(rendered_text.as_bytes());
    hex::encode(h.finalize())
}

pub trait InferenceBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(&self, batch: &PromptBatch) -> Result<RawResponse, InferenceError>;
}

impl<T: InferenceBackend + ?Sized> InferenceBackend for Arc<T> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn complete(&self, batch: &PromptBatch) -> Result<RawResponse, InferenceError> {
        (**self).complete(batch)
    }
}

/// Chat-completions client with retries.
pub struct LiveBackend {
    agent: ureq::Agent,
    config: InferenceConfig,
}

impl LiveBackend {
    pub fn new(config: InferenceConfig) -> Result<Self, InferenceError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { agent, config })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self
            .config
            .backoff_base_ms
            .saturating_mul(1 << (attempt - 1).min(16));
        let jitter = if base > 1 {
            rand::random_range(0..base / 2)
        } else {
            0
        };
        Duration::from_millis(base + jitter)
    }

    fn send(&self, text: &str) -> Result<String, Attempt> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": text}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        });
        let mut req = self.agent.post(&self.config.endpoint_url);
        if let Some(token) = &self.config.bearer_token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = match req.send_json(&body) {
            Ok(resp) => resp,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Timeout),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(Attempt::Timeout)
            }
            Err(e) => return Err(Attempt::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .read_to_string()
            .map_err(|e| Attempt::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => extract_content(&text).map_err(Attempt::Fatal),
            500..=599 => Err(Attempt::Transient(format!("HTTP {status}: {}", snippet(&text)))),
            _ => Err(Attempt::Fatal(InferenceError::Rejected {
                status,
                body: snippet(&text),
            })),
        }
    }
}

enum Attempt {
    Timeout,
    Transient(String),
    Fatal(InferenceError),
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}

fn extract_content(body: &str) -> Result<String, InferenceError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| InferenceError::BadResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| InferenceError::BadResponse("missing choices[0].message.content".into()))
}

impl InferenceBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&self, batch: &PromptBatch) -> Result<RawResponse, InferenceError> {
        let started = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let failure = match self.send(&batch.rendered_text) {
                Ok(content) => {
                    return Ok(RawResponse {
                        note_id: batch.note_id.clone(),
                        batch_id: batch.batch_id,
                        content,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                        backend: BackendKind::Live,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(other) => other,
            };
            if attempt >= max_attempts {
                return Err(match failure {
                    Attempt::Timeout => InferenceError::Timeout { attempts: attempt },
                    Attempt::Transient(last) => InferenceError::ExhaustedRetries {
                        attempts: attempt,
                        last,
                    },
                    Attempt::Fatal(e) => e,
                });
            }
            std::thread::sleep(self.backoff(attempt));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub digest: String,
    pub model_name: String,
    pub content: String,
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<Vec<RecordingEntry>, InferenceError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| InferenceError::Recording {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_recording<W: Write>(entries: &[RecordingEntry], mut out: W) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Serves recorded responses keyed by prompt digest.
pub struct ReplayBackend {
    model_name: String,
    temperature: f64,
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<RecordingEntry>, model_name: &str, temperature: f64) -> Self {
        let mut responses = HashMap::with_capacity(entries.len());
        for e in entries {
            responses.entry(e.digest).or_insert(e.content);
        }
        Self {
            model_name: model_name.to_string(),
            temperature,
            responses,
        }
    }

    pub fn from_file(
        path: impl AsRef<Path>,
        model_name: &str,
        temperature: f64,
    ) -> Result<Self, InferenceError> {
        Ok(Self::new(read_recording(path)?, model_name, temperature))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl InferenceBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, batch: &PromptBatch) -> Result<RawResponse, InferenceError> {
        let digest = prompt_digest(&self.model_name, self.temperature, &batch.rendered_text);
        match self.responses.get(&digest) {
            Some(content) => Ok(RawResponse {
                note_id: batch.note_id.clone(),
                batch_id: batch.batch_id,
                content: content.clone(),
                latency_ms: 0,
                attempt_count: 1,
                backend: BackendKind::Replay,
            }),
            None => Err(InferenceError::ReplayMiss {
                digest,
                note_id: batch.note_id.clone(),
                batch_id: batch.batch_id,
            }),
        }
    }
}

/// Wraps a backend and keeps every successful exchange for later replay.
pub struct Recorder<B> {
    inner: B,
    model_name: String,
    temperature: f64,
    entries: Mutex<BTreeMap<String, RecordingEntry>>,
}

impl<B: InferenceBackend> Recorder<B> {
    pub fn new(inner: B, model_name: &str, temperature: f64) -> Self {
        Self {
            inner,
            model_name: model_name.to_string(),
            temperature,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded entries, sorted by digest.
    pub fn entries(&self) -> Vec<RecordingEntry> {
        self.entries.lock().unwrap().values().cloned().collect()
    }
}

impl<B: InferenceBackend> InferenceBackend for Recorder<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn complete(&self, batch: &PromptBatch) -> Result<RawResponse, InferenceError> {
        let resp = self.inner.complete(batch)?;
        let digest = prompt_digest(&self.model_name, self.temperature, &batch.rendered_text);
        self.entries
            .lock()
            .unwrap()
            .entry(digest.clone())
            .or_insert_with(|| RecordingEntry {
                digest,
                model_name: self.model_name.clone(),
                content: resp.content.clone(),
            });
        Ok(resp)
    }
}

/// Sends each distinct prompt once and returns the recording, in prompt order.
pub fn record_session(
    backend: &dyn InferenceBackend,
    prompts: &[PromptBatch],
    config: &InferenceConfig,
) -> Result<Vec<RecordingEntry>, InferenceError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in prompts {
        let digest = prompt_digest(&config.model_name, config.temperature, &p.rendered_text);
        if !seen.insert(digest.clone()) {
            continue;
        }
        let resp = backend.complete(p)?;
        out.push(RecordingEntry {
            digest,
            model_name: config.model_name.clone(),
            content: resp.content,
        });
    }
    Ok(out)
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.available.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

/// A backend shared by all workers, with a cap on requests in flight.
pub struct InferenceClient {
    backend: Box<dyn InferenceBackend>,
    permits: Semaphore,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    calls: AtomicU64,
}

impl InferenceClient {
    pub fn new(backend: Box<dyn InferenceBackend>, max_concurrency: usize) -> Self {
        Self {
            backend,
            permits: Semaphore {
                available: Mutex::new(max_concurrency.max(1)),
                cv: Condvar::new(),
            },
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn complete(&self, batch: &PromptBatch) -> Result<RawResponse, InferenceError> {
        self.permits.acquire();
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let result = self.backend.complete(batch);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.permits.release();
        result
    }

    /// Number of `complete` calls made through this client.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(text: &str) -> PromptBatch {
        PromptBatch {
            note_id: "n1".into(),
            batch_id: 1,
            question_ids: vec!["q".into()],
            rendered_text: text.into(),
            token_estimate: 1,
        }
    }

    #[test]
    fn digest_changes_with_each_input() {
        let d = prompt_digest("m", 0.0, "hello");
        assert_eq!(d.len(), 64);
        assert_eq!(d, prompt_digest("m", 0.0, "hello"));
        assert_ne!(d, prompt_digest("m2", 0.0, "hello"));
        assert_ne!(d, prompt_digest("m", 0.1, "hello"));
        assert_ne!(d, prompt_digest("m", 0.0, "hello!"));
        // Length prefixes keep field boundaries unambiguous.
        assert_ne!(prompt_digest("ab", 0.0, "c"), prompt_digest("a", 0.0, "bc"));
    }

    #[test]
    fn replay_hit_and_miss() {
        let entries = vec![RecordingEntry {
            digest: prompt_digest("m", 0.0, "p1"),
            model_name: "m".into(),
            content: "answer".into(),
        }];
        let r = ReplayBackend::new(entries, "m", 0.0);
        let resp = r.complete(&batch("p1")).unwrap();
        assert_eq!(resp.content, "answer");
        assert_eq!(resp.backend, BackendKind::Replay);
        assert!(matches!(
            r.complete(&batch("p2")),
            Err(InferenceError::ReplayMiss { .. })
        ));
    }

    #[test]
    fn record_session_dedupes_and_handles_empty() {
        struct Echo;
        impl InferenceBackend for Echo {
            fn kind(&self) -> BackendKind {
                BackendKind::Live
            }
            fn complete(&self, b: &PromptBatch) -> Result<RawResponse, InferenceError> {
                Ok(RawResponse {
                    note_id: b.note_id.clone(),
                    batch_id: b.batch_id,
                    content: b.rendered_text.to_uppercase(),
                    latency_ms: 0,
                    attempt_count: 1,
                    backend: BackendKind::Live,
                })
            }
        }
        let cfg = InferenceConfig::default();
        let prompts: Vec<_> = (0..6).map(|i| batch(&format!("p{i}"))).collect();
        let rec = record_session(&Echo, &prompts, &cfg).unwrap();
        assert_eq!(rec.len(), 6);
        let again = record_session(&Echo, &prompts, &cfg).unwrap();
        assert_eq!(rec, again);
        assert!(record_session(&Echo, &[], &cfg).unwrap().is_empty());
        let dup = vec![batch("x"), batch("x")];
        assert_eq!(record_session(&Echo, &dup, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = InferenceConfig::default();
        assert!(c.validate().is_ok());
        c.temperature = -0.5;
        assert!(c.validate().is_err());
        c.temperature = 0.0;
        c.max_concurrency = 0;
        assert!(c.validate().is_err());
    }
}
