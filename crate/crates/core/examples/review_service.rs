//! Starts the review API on a random port, backed by the replay fixture, and
//! walks through the calls a reviewer's browser would make.

use std::sync::Arc;

use discharge_audit::config::AuditConfig;
use discharge_audit::server::{router, BackgroundServer, ServiceState};
use discharge_audit::service::{backend_for, context_for, load_cohort};
use discharge_audit::store::{AdjudicationLog, ResultStore};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/replay");
    let cfg = AuditConfig::load(format!("{dir}/audit.toml"))?;
    let note = load_cohort(&cfg)?.remove(0);
    let ctx = context_for(&cfg, backend_for(&cfg)?)?;

    let out = std::env::temp_dir().join(format!("discharge-audit-review-{}", std::process::id()));
    std::fs::create_dir_all(&out)?;
    let state = ServiceState::new(
        Arc::new(ctx),
        ResultStore::new(out.join("results.jsonl")),
        AdjudicationLog::new(out.join("adjudications.jsonl")),
        Some("demo-token".into()),
        cfg.server.sync_char_limit,
    );
    let server = BackgroundServer::start(router(Arc::new(state)))?;
    let base = server.base_url();
    println!("review API listening on {base}");

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let auth = "Bearer demo-token";

    let checklist: Value = agent.get(format!("{base}/checklist")).header("Authorization", auth).call()?.body_mut().read_json()?;
    println!("checklist has {} batches", checklist["batches"].as_array().map_or(0, Vec::len));

    let audit: Value = agent
        .post(format!("{base}/audits"))
        .header("Authorization", auth)
        .send_json(json!({ "note_id": note.note_id, "text": note.text }))?
        .body_mut()
        .read_json()?;
    println!(
        "audited {} as run {}: score {}/46",
        audit["note_id"], audit["run_id"], audit["completeness_score"]
    );

    let adjudication = json!({
        "note_id": note.note_id, "question_id": "E.01", "verdict": "No", "annotator_id": "reviewer-1"
    });
    let resp = agent.post(format!("{base}/adjudications")).header("Authorization", auth).send_json(adjudication)?;
    println!("adjudication stored: HTTP {}", resp.status());

    let report: Value = agent.get(format!("{base}/report")).header("Authorization", auth).call()?.body_mut().read_json()?;
    println!("report over {} note(s), mean {}", report["n_summaries"], report["score_mean"]);

    let anonymous = agent.get(format!("{base}/results")).call()?;
    println!("without a token: HTTP {}", anonymous.status());

    std::fs::remove_dir_all(&out)?;
    Ok(())
}
