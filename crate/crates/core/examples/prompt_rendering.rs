//! Renders the six batch prompts for one discharge summary and prints the
//! first one, along with the de-identification placeholders it contains.

use discharge_audit::checklist::AuditChecklist;
use discharge_audit::cohort::{DischargeRecord, Gender};
use discharge_audit::prompt::{build_prompts, detect_placeholders, PromptBudget, PromptTemplate};

const SUMMARY: &str = "\
Name: ___  Unit No: ___
Admission Date: ___  Discharge Date: ___
Chief Complaint: chest pain
History of Present Illness: 64 year old man referred by his cardiologist with exertional chest pain.
Discharge Medications: aspirin 81 mg daily, atorvastatin 40 mg daily.
Followup Instructions: see Dr. ___ in cardiology clinic in 2 weeks.";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let record = DischargeRecord {
        note_id: "demo-1".into(),
        subject_id: "s1".into(),
        hadm_id: "h1".into(),
        text: SUMMARY.into(),
        age: 64,
        gender: Gender::Male,
        discharge_location: "HOME".into(),
        icu_stay: false,
        icu_los: None,
        admission_los: 3.0,
        died_in_hospital: false,
    };
    let prompts = build_prompts(
        &record,
        &AuditChecklist::discharged(),
        &PromptTemplate::default(),
        PromptBudget::default(),
    )?;
    for p in &prompts {
        println!("batch {}: {} questions, ~{} tokens", p.batch_id, p.question_ids.len(), p.token_estimate);
    }
    println!("\n{}", prompts[0].rendered_text);

    let spans = detect_placeholders(SUMMARY);
    println!("\n{} placeholder runs at byte offsets {:?}", spans.len(), spans);
    Ok(())
}
