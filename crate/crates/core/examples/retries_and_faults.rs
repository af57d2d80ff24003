//! Shows how the live client reacts to server errors, rejections, slow
//! responses and garbled output, using the local keyword model with
//! injected faults.

use std::time::Duration;

use discharge_audit::checklist::AuditChecklist;
use discharge_audit::cohort::{DischargeRecord, Gender};
use discharge_audit::inference::{InferenceBackend, InferenceConfig, LiveBackend};
use discharge_audit::prompt::{build_prompts, PromptBudget, PromptTemplate};
use discharge_audit::synthetic::{Fault, SyntheticServer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let record = DischargeRecord {
        note_id: "demo".into(),
        subject_id: "s".into(),
        hadm_id: "h".into(),
        text: "Allergies: none known.\nChief Complaint: fever.".into(),
        age: 50,
        gender: Gender::Female,
        discharge_location: "HOME".into(),
        icu_stay: false,
        icu_los: None,
        admission_los: 2.0,
        died_in_hospital: false,
    };
    let prompt = build_prompts(
        &record,
        &AuditChecklist::discharged(),
        &PromptTemplate::default(),
        PromptBudget::default(),
    )?
    .remove(0);

    let server = SyntheticServer::start()?;
    let backend = LiveBackend::new(InferenceConfig {
        endpoint_url: server.url(),
        max_retries: 2,
        backoff_base_ms: 50,
        timeout_secs: 1,
        ..InferenceConfig::default()
    })?;

    let scenarios: [(&str, Vec<Fault>); 5] = [
        ("two 503s, then success", vec![Fault::Status(503), Fault::Status(503)]),
        ("three 500s exhaust the retries", vec![Fault::Status(500); 3]),
        ("a 400 is not retried", vec![Fault::Status(400)]),
        ("slow replies time out", vec![Fault::Delay(Duration::from_millis(1500)); 3]),
        ("garbled content is returned as is", vec![Fault::Garbled]),
    ];
    for (label, faults) in scenarios {
        server.inject(faults);
        let before = server.requests();
        let outcome = match backend.complete(&prompt) {
            Ok(r) => format!("ok after {} attempt(s): {:.60}", r.attempt_count, r.content),
            Err(e) => format!("error: {e}"),
        };
        println!("{label}: {} request(s), {outcome}", server.requests() - before);
    }
    Ok(())
}
