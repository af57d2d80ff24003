//! Audits the ten-note fixture against a local keyword model over HTTP,
//! records every exchange, then reruns the audit offline from the recording
//! and checks that the results match.

use std::sync::Arc;

use discharge_audit::checklist::AuditChecklist;
use discharge_audit::cohort::{load_records, IngestionConfig};
use discharge_audit::inference::{
    write_recording, InferenceClient, InferenceConfig, LiveBackend, Recorder, ReplayBackend,
};
use discharge_audit::pipeline::{run_cohort, AuditContext};
use discharge_audit::synthetic::SyntheticServer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/replay");
    let records = load_records(
        format!("{dir}/notes.csv"),
        format!("{dir}/admissions.csv"),
        &IngestionConfig::default(),
    )?;
    let checklist = Arc::new(AuditChecklist::discharged());

    let server = SyntheticServer::start()?;
    let config = InferenceConfig {
        endpoint_url: server.url(),
        model_name: "synthetic-keyword-v1".into(),
        ..InferenceConfig::default()
    };
    let recorder = Arc::new(Recorder::new(
        LiveBackend::new(config.clone())?,
        &config.model_name,
        config.temperature,
    ));
    let live_ctx = AuditContext::new(checklist.clone(), Arc::new(InferenceClient::new(Box::new(recorder.clone()), 4)));
    let progress = |done: usize, total: usize| eprintln!("live: {done}/{total}");
    let live = run_cohort(&live_ctx, &records, 4, Some(&progress))?;
    println!("live run: {} calls, mean score {:.2}", live.inference_calls, live.report.score_mean);

    let path = std::env::temp_dir().join("discharge-audit-recording.jsonl");
    write_recording(&recorder.entries(), std::fs::File::create(&path)?)?;
    println!("recorded {} exchanges to {}", recorder.entries().len(), path.display());

    let replay = ReplayBackend::from_file(&path, &config.model_name, config.temperature)?;
    let replay_ctx = AuditContext::new(checklist, Arc::new(InferenceClient::new(Box::new(replay), 4)));
    let replayed = run_cohort(&replay_ctx, &records, 4, None)?;
    println!(
        "replayed run: {} calls, identical results: {}",
        replayed.inference_calls,
        replayed.results == live.results
    );
    Ok(())
}
