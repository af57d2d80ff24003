mod common;

use std::collections::BTreeSet;

use common::{checklist_strategy, record};
use discharge_audit::checklist::{AuditChecklist, ChecklistError, ValidationError, MAX_BATCH_SIZE};
use discharge_audit::prompt::{build_prompts, PromptBudget, PromptTemplate};
use proptest::prelude::*;

const EXPECTED_COUNTS: [(&str, usize); 10] = [
    ("D1", 3),
    ("I", 3),
    ("S", 2),
    ("C", 4),
    ("H", 8),
    ("A", 8),
    ("R", 6),
    ("G", 1),
    ("E", 3),
    ("D2", 8),
];

#[test]
fn bundled_checklist_shape() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/discharged_v46.json");
    let c = AuditChecklist::load(path).unwrap();
    assert_eq!(c, AuditChecklist::discharged());
    let counts: Vec<(&str, usize)> = c
        .components
        .iter()
        .map(|comp| {
            let n = c.questions.iter().filter(|q| q.component == comp.code).count();
            (comp.code.as_str(), n)
        })
        .collect();
    assert_eq!(counts, EXPECTED_COUNTS);
    assert_eq!(c.len(), 46);
    let batches = c.batch_partition();
    assert_eq!(batches.len(), 6);
    assert!(batches.iter().all(|b| b.questions.len() <= 9));
    let sizes: Vec<usize> = batches.iter().map(|b| b.questions.len()).collect();
    assert_eq!(sizes, [8, 8, 8, 8, 6, 8]);
}

#[test]
fn report_labels_and_verbatim_questions() {
    let c = AuditChecklist::discharged();
    let e01 = c.question("E.01").unwrap();
    assert_eq!(
        e01.text,
        "Is the contact information for the Primary Care Provider (PCP) listed in the summary?"
    );
    assert_eq!(e01.report_label.as_deref(), Some("PCP contact information"));
    assert!(c.question("R.01").unwrap().text.contains("rationale"));
    assert!(matches!(c.question("Z.99"), Err(ChecklistError::NotFound(_))));
}

fn mutated(f: impl FnOnce(&mut AuditChecklist)) -> Result<(), ValidationError> {
    let mut c = AuditChecklist::discharged();
    f(&mut c);
    c.validate()
}

#[test]
fn mutations_are_rejected() {
    assert!(matches!(
        mutated(|c| c.questions[1].id = c.questions[0].id.clone()),
        Err(ValidationError::DuplicateId(_))
    ));
    assert!(matches!(mutated(|c| { c.questions.pop(); }), Err(ValidationError::CountMismatch { .. })));
    assert!(matches!(
        mutated(|c| c.questions[0].component = "S".into()),
        Err(ValidationError::ComponentCountMismatch { .. })
    ));
    assert!(matches!(
        mutated(|c| c.questions[0].component = "ZZ".into()),
        Err(ValidationError::UnknownComponent { .. })
    ));
    assert!(matches!(
        mutated(|c| c.questions[0].batch_id = 7),
        Err(ValidationError::BatchOutOfRange { .. })
    ));
    // Moving a question from batch 5 (six questions) into batch 1 makes it nine;
    // moving two makes it ten.
    assert!(mutated(|c| {
        let q = c.questions.iter_mut().find(|q| q.batch_id == 5).unwrap();
        q.batch_id = 1;
    })
    .is_ok());
    assert!(matches!(
        mutated(|c| {
            for q in c.questions.iter_mut().filter(|q| q.batch_id == 5).take(2) {
                q.batch_id = 1;
            }
        }),
        Err(ValidationError::BatchTooLarge { .. })
    ));
    assert!(matches!(
        mutated(|c| {
            for q in c.questions.iter_mut().filter(|q| q.batch_id == 5) {
                q.batch_id = 4;
            }
        }),
        Err(ValidationError::EmptyBatch(5)) | Err(ValidationError::BatchTooLarge { .. })
    ));
    assert!(matches!(mutated(|c| c.questions[3].text = " ".into()), Err(ValidationError::EmptyField(_))));
    // Profile-level rules: a different component split or batch count is
    // rejected even if otherwise self-consistent.
    assert!(matches!(
        mutated(|c| {
            c.components[0].expected_count = 2;
            c.components[1].expected_count = 4;
            c.questions[2].component = "I".into();
        }),
        Err(ValidationError::Profile(_))
    ));
}

#[test]
fn profile_free_checklist_skips_layout_rules() {
    let mut c = AuditChecklist::discharged();
    c.profile = None;
    c.components[0].expected_count = 2;
    c.components[1].expected_count = 4;
    c.questions[2].component = "I".into();
    assert!(c.validate().is_ok());
}

#[test]
fn malformed_json_is_a_parse_error() {
    assert!(matches!(AuditChecklist::from_json("{"), Err(ChecklistError::Parse(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn generated_checklists_partition_and_cover(checklist in checklist_strategy()) {
        prop_assert!(checklist.validate().is_ok(), "{:?}", checklist.validate());
        let batches = checklist.batch_partition();
        prop_assert_eq!(batches.len() as u32, checklist.batch_count);
        let mut seen = BTreeSet::new();
        for b in &batches {
            prop_assert!(!b.questions.is_empty());
            prop_assert!(b.questions.len() <= MAX_BATCH_SIZE);
            for q in &b.questions {
                prop_assert_eq!(q.batch_id, b.batch_id);
                prop_assert!(seen.insert(q.id.clone()), "{} in two batches", q.id);
            }
        }
        let all: BTreeSet<String> = checklist.questions.iter().map(|q| q.id.clone()).collect();
        prop_assert_eq!(&seen, &all);

        let prompts = build_prompts(
            &record("n1", "Discharge summary text."),
            &checklist,
            &PromptTemplate::default(),
            PromptBudget::default(),
        ).unwrap();
        prop_assert_eq!(prompts.len(), batches.len());
        let mut covered: Vec<String> = prompts.iter().flat_map(|p| p.question_ids.clone()).collect();
        let n = covered.len();
        covered.sort();
        covered.dedup();
        prop_assert_eq!(n, covered.len());
        prop_assert_eq!(covered.into_iter().collect::<BTreeSet<_>>(), all);
        for p in &prompts {
            for id in &p.question_ids {
                let line = format!("[{id}] ");
                prop_assert!(p.rendered_text.contains(&line));
            }
        }
    }
}
