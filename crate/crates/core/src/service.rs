//! Batch runs driven by an [`AuditConfig`]: load inputs, pick the notes, audit
//! them and write the result store, cohort report and run summary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::{emit_report, AggregateError};
use crate::checklist::{AuditChecklist, ChecklistError};
use crate::cohort::{
    filter_eligible, load_records, stratified_sample, CohortError, CohortSample, CohortSpec,
    DischargeRecord,
};
use crate::config::{AuditConfig, BackendChoice, ConfigError};
use crate::inference::{
    write_recording, BackendKind, InferenceBackend, InferenceClient, InferenceError, LiveBackend,
    Recorder, ReplayBackend,
};
use crate::pipeline::{run_cohort, AuditContext, CohortRun, PipelineError};
use crate::prompt::{PromptError, PromptTemplate};
use crate::response::VerifyMode;
use crate::store::{ResultStore, StoreError, StoredResult, RESULTS_FILE};

pub const RUN_SUMMARY_FILE: &str = "run_summary.json";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checklist(#[from] ChecklistError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Missing(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_checklist(cfg: &AuditConfig) -> Result<AuditChecklist, ServiceError> {
    Ok(match &cfg.checklist {
        Some(path) => AuditChecklist::load(path)?,
        None => AuditChecklist::discharged(),
    })
}

pub fn load_template(cfg: &AuditConfig) -> Result<PromptTemplate, ServiceError> {
    Ok(match &cfg.template {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::default(),
    })
}

/// The backend named by the config. Live endpoints honour the environment
/// overrides for URL and token.
pub fn backend_for(cfg: &AuditConfig) -> Result<Box<dyn InferenceBackend>, ServiceError> {
    Ok(match cfg.backend {
        BackendChoice::Live => Box::new(LiveBackend::new(cfg.inference.clone().with_env_overrides())?),
        BackendChoice::Replay => {
            let path = cfg
                .recording
                .as_ref()
                .ok_or_else(|| ServiceError::Missing("replay backend needs a recording".into()))?;
            Box::new(ReplayBackend::from_file(
                path,
                &cfg.inference.model_name,
                cfg.inference.temperature,
            )?)
        }
    })
}

pub fn context_for(
    cfg: &AuditConfig,
    backend: Box<dyn InferenceBackend>,
) -> Result<AuditContext, ServiceError> {
    let checklist = Arc::new(load_checklist(cfg)?);
    let client = Arc::new(InferenceClient::new(backend, cfg.inference.max_concurrency));
    Ok(AuditContext {
        checklist,
        template: load_template(cfg)?,
        budget: cfg.budget(),
        mode: cfg.mode,
        repair: cfg.repair,
        client,
    })
}

/// Every note joined with its admission.
pub fn load_cohort(cfg: &AuditConfig) -> Result<Vec<DischargeRecord>, ServiceError> {
    let notes = cfg
        .notes
        .as_ref()
        .ok_or_else(|| ServiceError::Missing("config does not name a notes file".into()))?;
    let admissions = cfg
        .admissions
        .as_ref()
        .ok_or_else(|| ServiceError::Missing("config does not name an admissions file".into()))?;
    Ok(load_records(notes, admissions, &cfg.ingestion)?)
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Notes to audit, in audit order.
    pub records: Vec<DischargeRecord>,
    /// Present when a stratified sample was drawn.
    pub sample: Option<CohortSample>,
}

/// Draws the configured sample, or takes every eligible note in note-id order.
pub fn select_records(cfg: &AuditConfig, records: &[DischargeRecord]) -> Result<Selection, ServiceError> {
    match &cfg.cohort {
        Some(spec) => {
            let eligible = filter_eligible(records, spec);
            let sample = stratified_sample(&eligible, spec)?;
            Ok(Selection {
                records: sample.records(),
                sample: Some(sample),
            })
        }
        None => {
            let mut eligible = filter_eligible(records, &CohortSpec::new(0, 0));
            eligible.sort_by(|a, b| a.note_id.cmp(&b.note_id));
            Ok(Selection {
                records: eligible,
                sample: None,
            })
        }
    }
}

/// A run id that depends only on what was audited and how.
pub fn derive_run_id(ctx: &AuditContext, model_name: &str, temperature: f64, records: &[DischargeRecord]) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_be_bytes());
        h.update(bytes);
    };
    field(ctx.checklist.version.as_bytes());
    field(ctx.template.version.as_bytes());
    field(model_name.as_bytes());
    field(&temperature.to_bits().to_be_bytes());
    field(match ctx.mode {
        VerifyMode::Strict => b"strict",
        VerifyMode::Lenient => b"lenient",
    });
    field(&[ctx.repair as u8]);
    for r in records {
        field(r.note_id.as_bytes());
        field(r.text.as_bytes());
    }
    format!("run-{}", &hex::encode(h.finalize())[..12])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub backend: BackendKind,
    pub model_name: String,
    pub checklist_version: String,
    pub n_notes: usize,
    pub n_audited: usize,
    pub n_skipped: usize,
    pub inference_calls: u64,
    pub score_mean: f64,
    /// File names written to the output directory.
    pub outputs: Vec<String>,
}

/// Audits `records`, appends them to the result store and writes the cohort
/// report and run summary into `cfg.output_dir`.
pub fn run_audit(
    cfg: &AuditConfig,
    ctx: &AuditContext,
    records: &[DischargeRecord],
) -> Result<(RunSummary, CohortRun), ServiceError> {
    let run_id = cfg.run_id.clone().unwrap_or_else(|| {
        derive_run_id(ctx, &cfg.inference.model_name, cfg.inference.temperature, records)
    });
    let run = run_cohort(ctx, records, cfg.workers, None)?;

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let store = ResultStore::new(out.join(RESULTS_FILE));
    let stored: Vec<StoredResult> = run
        .results
        .iter()
        .map(|r| StoredResult {
            run_id: run_id.clone(),
            result: r.clone(),
        })
        .collect();
    store.append(&stored)?;
    let mut outputs = vec![RESULTS_FILE.to_string()];
    for path in emit_report(&run.report, out)? {
        outputs.extend(path.file_name().map(|n| n.to_string_lossy().into_owned()));
    }
    outputs.push(RUN_SUMMARY_FILE.to_string());

    let summary = RunSummary {
        run_id,
        backend: ctx.client.kind(),
        model_name: cfg.inference.model_name.clone(),
        checklist_version: ctx.checklist.version.clone(),
        n_notes: records.len(),
        n_audited: run.report.n_summaries,
        n_skipped: run.report.n_skipped,
        inference_calls: run.inference_calls,
        score_mean: run.report.score_mean,
        outputs,
    };
    write_json(&out.join(RUN_SUMMARY_FILE), &summary)?;
    Ok((summary, run))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let mut text = serde_json::to_string_pretty(value).map_err(StoreError::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Runs the audit against the live endpoint and writes every exchange,
/// including repair prompts, to a recording that `replay` can serve.
pub fn record_run(
    cfg: &AuditConfig,
    records: &[DischargeRecord],
    recording: &Path,
) -> Result<(usize, CohortRun), ServiceError> {
    let inference = cfg.inference.clone().with_env_overrides();
    let recorder = Arc::new(Recorder::new(
        LiveBackend::new(inference.clone())?,
        &inference.model_name,
        inference.temperature,
    ));
    let ctx = context_for(cfg, Box::new(recorder.clone()))?;
    let run = run_cohort(&ctx, records, cfg.workers, None)?;
    let entries = recorder.entries();
    if let Some(dir) = recording.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = std::fs::File::create(recording).map_err(io_err(recording))?;
    write_recording(&entries, std::io::BufWriter::new(file)).map_err(io_err(recording))?;
    Ok((entries.len(), run))
}

/// The output directory's result store.
pub fn store_path(cfg: &AuditConfig) -> PathBuf {
    cfg.output_dir.join(RESULTS_FILE)
}
