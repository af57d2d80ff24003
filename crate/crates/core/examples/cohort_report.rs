//! Rebuilds the cohort report from the 200-note verdict fixture: score
//! histogram, percentiles and the questions most often answered Unclear.

use discharge_audit::aggregate::{aggregate, emit_report, unclear_ranking};
use discharge_audit::checklist::AuditChecklist;
use discharge_audit::response::{assemble_result, AuditAnswer, Verdict};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let checklist = AuditChecklist::discharged();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/cohort/verdicts.csv");
    let mut reader = csv::Reader::from_path(path)?;
    let mut results = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (note_id, verdicts) = (&row[0], &row[1]);
        let answers = checklist
            .questions
            .iter()
            .zip(verdicts.chars())
            .map(|(q, c)| AuditAnswer {
                note_id: note_id.to_string(),
                question_id: q.id.clone(),
                verdict: match c {
                    'Y' => Verdict::Yes,
                    'N' => Verdict::No,
                    _ => Verdict::Unclear,
                },
                evidence: Vec::new(),
                evidence_verified: Vec::new(),
                justification: String::new(),
                flags: Default::default(),
            })
            .collect();
        results.push(assemble_result(note_id, answers, &checklist)?);
    }

    let report = aggregate(&results)?;
    print!("{}", report.render_histogram(40));
    println!(
        "mean {:.2}/{} ({:.1}%), range {}-{}, percentiles {:?}",
        report.score_mean,
        report.total_questions,
        report.score_pct_of_total,
        report.score_min,
        report.score_max,
        report.percentile_table
    );
    for (id, rate) in unclear_ranking(&report, 5) {
        let q = checklist.question(&id)?;
        println!("{id:<6} {:>5.1}%  {}", rate * 100.0, q.report_label.as_deref().unwrap_or(&q.topic));
    }

    let out = std::env::temp_dir().join("discharge-audit-report");
    for file in emit_report(&report, &out)? {
        println!("wrote {}", file.display());
    }
    Ok(())
}
