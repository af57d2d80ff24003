//! Parses a messy model reply and checks each quoted sentence against the
//! source summary, comparing strict and lenient verification.

use discharge_audit::response::{locate_evidence, parse_content, verify_evidence, VerifyMode};

const SOURCE: &str = "Allergies: Penicillins\nPCP:   Dr. ___ , phone ___-___-____\nCode status: Full code";

const REPLY: &str = r#"Sure, here is the audit.
```json
{"answers": [
  {"question_id": "E.01", "verdict": "yes", "evidence": ["PCP: Dr. ___ , phone ___-___-____"], "justification": "PCP listed"},
  {"question_id": "G.01", "verdict": "Yes", "evidence": ["Patient wishes to be DNR"], "justification": "quoted"},
  {"question_id": "A.01", "verdict": "Not documented", "evidence": [], "justification": ""}
]}
```"#;

fn main() {
    let expected: Vec<String> = ["E.01", "G.01", "A.01", "R.01"].map(String::from).to_vec();
    let answers = parse_content("demo", REPLY, &expected);
    for answer in &answers {
        let strict = verify_evidence(answer, SOURCE, VerifyMode::Strict);
        let lenient = verify_evidence(answer, SOURCE, VerifyMode::Lenient);
        println!(
            "{}: parsed {:?}, strict {:?}, lenient {:?}, flags {:?}",
            answer.question_id, answer.verdict, strict.verdict, lenient.verdict, strict.flags
        );
        for (quote, ok) in strict.evidence.iter().zip(&strict.evidence_verified) {
            let span = locate_evidence(SOURCE, quote);
            println!("    {quote:?} verified={ok} span={span:?}");
        }
    }
}
