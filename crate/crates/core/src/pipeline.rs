//! End-to-end audit of discharge summaries: prompts, inference, parsing,
//! verification and scoring.
//!
//! Batches of one note are sent in batch order. A batch whose response cannot
//! be fully parsed is re-prompted once; whatever is still unreadable after
//! that stays `Unclear`.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::aggregate::{aggregate, AggregateError, CohortReport};
use crate::checklist::AuditChecklist;
use crate::cohort::DischargeRecord;
use crate::inference::{InferenceClient, InferenceError};
use crate::prompt::{build_prompts, repair_prompt, PromptBudget, PromptTemplate};
use crate::response::{
    assemble_result, normalize_whitespace, parse_content, parse_response, verify_against, AnswerFlag,
    AuditAnswer, AuditResult, CoverageError, VerifyMode,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("note {note_id} batch {batch_id}: {source}")]
    Inference {
        note_id: String,
        batch_id: u32,
        #[source]
        source: InferenceError,
    },
    #[error("note {note_id}: {source}")]
    Coverage {
        note_id: String,
        #[source]
        source: CoverageError,
    },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// Everything needed to audit one note; shared read-only between workers.
pub struct AuditContext {
    pub checklist: Arc<AuditChecklist>,
    pub template: PromptTemplate,
    pub budget: PromptBudget,
    pub mode: VerifyMode,
    /// Send one format-repair prompt per unparseable batch.
    pub repair: bool,
    pub client: Arc<InferenceClient>,
}

impl AuditContext {
    pub fn new(checklist: Arc<AuditChecklist>, client: Arc<InferenceClient>) -> Self {
        Self {
            checklist,
            template: PromptTemplate::default(),
            budget: PromptBudget::default(),
            mode: VerifyMode::Strict,
            repair: true,
            client,
        }
    }
}

fn has_parse_failure(answers: &[AuditAnswer]) -> bool {
    answers.iter().any(|a| a.has_flag(AnswerFlag::ParseFailure))
}

/// Audits one summary. Notes that cannot be prompted (empty or over the
/// context budget) come back as skipped results rather than errors.
pub fn audit_record(ctx: &AuditContext, record: &DischargeRecord) -> Result<AuditResult, PipelineError> {
    let version = &ctx.checklist.version;
    let prompts = match build_prompts(record, &ctx.checklist, &ctx.template, ctx.budget) {
        Ok(p) => p,
        Err(e) => return Ok(AuditResult::skipped(&record.note_id, version, e.to_string())),
    };
    let source = normalize_whitespace(&record.text);
    let mut answers = Vec::with_capacity(ctx.checklist.len());
    for prompt in &prompts {
        let inference_err = |source| PipelineError::Inference {
            note_id: record.note_id.clone(),
            batch_id: prompt.batch_id,
            source,
        };
        // A malformed completion envelope is a problem with this prompt, not
        // with the endpoint, so it is handled like unparseable content.
        let mut parsed = match ctx.client.complete(prompt) {
            Ok(raw) => parse_response(&raw, &prompt.question_ids),
            Err(InferenceError::BadResponse(_)) => {
                parse_content(&record.note_id, "", &prompt.question_ids)
            }
            Err(e) => return Err(inference_err(e)),
        };
        if ctx.repair && has_parse_failure(&parsed) {
            let retry = repair_prompt(prompt, &ctx.template);
            match ctx.client.complete(&retry) {
                Ok(raw) => {
                    let reparsed = parse_response(&raw, &prompt.question_ids);
                    for (slot, candidate) in parsed.iter_mut().zip(reparsed) {
                        if slot.has_flag(AnswerFlag::ParseFailure)
                            && !candidate.has_flag(AnswerFlag::ParseFailure)
                        {
                            *slot = candidate;
                        }
                    }
                }
                // No usable repair: keep the Unclear answers.
                Err(
                    InferenceError::ReplayMiss { .. }
                    | InferenceError::BadResponse(_)
                    | InferenceError::Rejected { .. },
                ) => {}
                Err(e) => return Err(inference_err(e)),
            }
        }
        answers.extend(parsed.iter().map(|a| verify_against(a, &source, ctx.mode)));
    }
    assemble_result(&record.note_id, answers, &ctx.checklist).map_err(|source| {
        PipelineError::Coverage {
            note_id: record.note_id.clone(),
            source,
        }
    })
}

#[derive(Debug, Clone)]
pub struct CohortRun {
    /// In the order the records were given.
    pub results: Vec<AuditResult>,
    pub report: CohortReport,
    pub inference_calls: u64,
}

/// Audits every record with a pool of `workers` threads, then aggregates.
///
/// The first inference failure (in record order) fails the whole run and no
/// report is produced.
pub fn run_cohort(
    ctx: &AuditContext,
    records: &[DischargeRecord],
    workers: usize,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<CohortRun, PipelineError> {
    let calls_before = ctx.client.calls();
    let slots: Mutex<Vec<Option<Result<AuditResult, PipelineError>>>> =
        Mutex::new((0..records.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, records.len().max(1)) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= records.len() {
                    break;
                }
                let outcome = audit_record(ctx, &records[i]);
                if outcome.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap()[i] = Some(outcome);
                let finished = done.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(report) = progress {
                    report(finished, records.len());
                }
            });
        }
    });

    let mut results = Vec::with_capacity(records.len());
    for slot in slots.into_inner().unwrap() {
        match slot {
            Some(Ok(r)) => results.push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    let report = aggregate(&results)?;
    Ok(CohortRun {
        results,
        report,
        inference_calls: ctx.client.calls() - calls_before,
    })
}
