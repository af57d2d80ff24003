//! Model verdicts against clinician gold labels.
//!
//! Pairs are matched on `(note_id, question_id)`; keys present on only one side
//! are reported and left out of every metric. For the 2x2 "missing element"
//! view the positive class is a `No` verdict. How `Unclear` collapses into that
//! view is set by [`UnclearPolicy`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{AuditAnswer, Verdict};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("predictions and gold labels share no (note_id, question_id) keys")]
    EmptyIntersection,
    #[error("duplicate gold label for note {note_id} question {question_id} annotator {annotator_id}")]
    DuplicateLabel {
        note_id: String,
        question_id: String,
        annotator_id: String,
    },
    #[error("gold labels {path} row {row}: {message}")]
    BadRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("malformed gold label table: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub note_id: String,
    pub question_id: String,
    pub verdict: Verdict,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Reads `note_id,question_id,verdict,annotator_id,note` rows.
pub fn load_gold_labels(path: impl AsRef<Path>) -> Result<Vec<GoldLabel>, EvaluationError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let bad = |row: usize, message: String| EvaluationError::BadRow {
        path: path.display().to_string(),
        row,
        message,
    };
    let (Some(n), Some(q), Some(v), Some(a)) = (
        col("note_id"),
        col("question_id"),
        col("verdict"),
        col("annotator_id"),
    ) else {
        return Err(bad(0, "header must include note_id, question_id, verdict, annotator_id".into()));
    };
    let note_col = col("note");
    let mut labels = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let field = |c: usize| row.get(c).unwrap_or("").trim().to_string();
        let verdict = field(v).parse::<Verdict>().map_err(|e| bad(i + 1, e.to_string()))?;
        labels.push(GoldLabel {
            note_id: field(n),
            question_id: field(q),
            verdict,
            annotator_id: field(a),
            note: note_col.map(field).filter(|s| !s.is_empty()),
        });
    }
    check_unique(&labels)?;
    Ok(labels)
}

fn check_unique(labels: &[GoldLabel]) -> Result<(), EvaluationError> {
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if !seen.insert((&l.note_id, &l.question_id, &l.annotator_id)) {
            return Err(EvaluationError::DuplicateLabel {
                note_id: l.note_id.clone(),
                question_id: l.question_id.clone(),
                annotator_id: l.annotator_id.clone(),
            });
        }
    }
    Ok(())
}

/// Per-key majority verdict across annotators; `Unclear` when the top count is tied.
pub fn majority_vote(labels: &[GoldLabel]) -> BTreeMap<(String, String), Verdict> {
    let mut votes: BTreeMap<(String, String), [usize; 3]> = BTreeMap::new();
    for l in labels {
        votes
            .entry((l.note_id.clone(), l.question_id.clone()))
            .or_default()[l.verdict.index()] += 1;
    }
    votes
        .into_iter()
        .map(|(key, counts)| {
            let top = *counts.iter().max().unwrap();
            let winners: Vec<Verdict> = Verdict::ALL
                .iter()
                .copied()
                .filter(|v| counts[v.index()] == top)
                .collect();
            let verdict = if winners.len() == 1 {
                winners[0]
            } else {
                Verdict::Unclear
            };
            (key, verdict)
        })
        .collect()
}

/// How `Unclear` maps into the binary missing-element view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnclearPolicy {
    /// Unclear counts as "not missing".
    #[default]
    Negative,
    /// Unclear counts as "missing".
    Positive,
    /// Pairs with Unclear on either side are left out of the 2x2 table.
    Exclude,
}

impl UnclearPolicy {
    fn positive(self, v: Verdict) -> Option<bool> {
        match (v, self) {
            (Verdict::No, _) => Some(true),
            (Verdict::Yes, _) => Some(false),
            (Verdict::Unclear, UnclearPolicy::Negative) => Some(false),
            (Verdict::Unclear, UnclearPolicy::Positive) => Some(true),
            (Verdict::Unclear, UnclearPolicy::Exclude) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingDetection {
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    /// `None` when there are no gold positives.
    pub sensitivity: Option<f64>,
    /// `None` when there are no gold negatives.
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_pairs: usize,
    pub unmatched_predictions: usize,
    pub unmatched_gold: usize,
    pub overall_accuracy: f64,
    /// Rows are gold, columns predicted, both in Yes, No, Unclear order.
    pub confusion: [[usize; 3]; 3],
    pub per_question_accuracy: BTreeMap<String, f64>,
    pub kappa: f64,
    pub unclear_policy: UnclearPolicy,
    pub missing_detection: MissingDetection,
}

/// Cohen's kappa from a square confusion matrix.
///
/// When chance agreement is 1 (both raters used one and the same class) the
/// statistic is undefined; it is reported as 1.0 because agreement is perfect.
pub fn cohen_kappa(confusion: &[[usize; 3]; 3]) -> f64 {
    let n: usize = confusion.iter().flatten().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let observed = (0..3).map(|i| confusion[i][i]).sum::<usize>() as f64 / n;
    let expected: f64 = (0..3)
        .map(|k| {
            let row: usize = confusion[k].iter().sum();
            let col: usize = confusion.iter().map(|r| r[k]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if (1.0 - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (observed - expected) / (1.0 - expected)
}

fn gold_map(gold: &[GoldLabel]) -> BTreeMap<(String, String), Verdict> {
    majority_vote(gold)
}

pub fn evaluate(
    predictions: &[AuditAnswer],
    gold: &[GoldLabel],
    policy: UnclearPolicy,
) -> Result<EvaluationReport, EvaluationError> {
    check_unique(gold)?;
    let gold = gold_map(gold);
    let mut predicted: HashMap<(&str, &str), Verdict> = HashMap::new();
    for p in predictions {
        predicted
            .entry((p.note_id.as_str(), p.question_id.as_str()))
            .or_insert(p.verdict);
    }

    let mut confusion = [[0usize; 3]; 3];
    let mut per_question: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut detection = [0usize; 4];
    let mut matched = 0;
    for ((note, question), g) in &gold {
        let Some(&p) = predicted.get(&(note.as_str(), question.as_str())) else {
            continue;
        };
        matched += 1;
        confusion[g.index()][p.index()] += 1;
        let entry = per_question.entry(question.clone()).or_default();
        entry.1 += 1;
        if *g == p {
            entry.0 += 1;
        }
        if let (Some(gp), Some(pp)) = (policy.positive(*g), policy.positive(p)) {
            let slot = match (gp, pp) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            detection[slot] += 1;
        }
    }
    if matched == 0 {
        return Err(EvaluationError::EmptyIntersection);
    }

    let [tp, fn_, fp, tn] = detection;
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    let trace: usize = (0..3).map(|i| confusion[i][i]).sum();
    Ok(EvaluationReport {
        n_pairs: matched,
        unmatched_predictions: predicted.len() - matched,
        unmatched_gold: gold.len() - matched,
        overall_accuracy: trace as f64 / matched as f64,
        confusion,
        per_question_accuracy: per_question
            .into_iter()
            .map(|(q, (hit, total))| (q, hit as f64 / total as f64))
            .collect(),
        kappa: cohen_kappa(&confusion),
        unclear_policy: policy,
        missing_detection: MissingDetection {
            true_positive: tp,
            false_negative: fn_,
            false_positive: fp,
            true_negative: tn,
            sensitivity: ratio(tp, fn_),
            specificity: ratio(tn, fp),
        },
    })
}

/// One report per annotator, each against that annotator's labels alone.
pub fn evaluate_per_annotator(
    predictions: &[AuditAnswer],
    gold: &[GoldLabel],
    policy: UnclearPolicy,
) -> BTreeMap<String, Result<EvaluationReport, EvaluationError>> {
    let mut by_annotator: BTreeMap<String, Vec<GoldLabel>> = BTreeMap::new();
    for g in gold {
        by_annotator.entry(g.annotator_id.clone()).or_default().push(g.clone());
    }
    by_annotator
        .into_iter()
        .map(|(a, labels)| (a, evaluate(predictions, &labels, policy)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub note_id: String,
    pub question_id: String,
    pub gold: Verdict,
    pub predicted: Verdict,
    pub evidence: Vec<String>,
    pub justification: String,
}

/// Disagreeing pairs, sorted by question id then note id.
pub fn disagreement_export(predictions: &[AuditAnswer], gold: &[GoldLabel]) -> Vec<Disagreement> {
    let gold = gold_map(gold);
    let mut seen = std::collections::HashSet::new();
    let mut rows: Vec<Disagreement> = predictions
        .iter()
        .filter(|p| seen.insert((p.note_id.as_str(), p.question_id.as_str())))
        .filter_map(|p| {
            let g = *gold.get(&(p.note_id.clone(), p.question_id.clone()))?;
            (g != p.verdict).then(|| Disagreement {
                note_id: p.note_id.clone(),
                question_id: p.question_id.clone(),
                gold: g,
                predicted: p.verdict,
                evidence: p.evidence.clone(),
                justification: p.justification.clone(),
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        a.question_id
            .cmp(&b.question_id)
            .then_with(|| a.note_id.cmp(&b.note_id))
    });
    rows
}

impl EvaluationReport {
    pub fn summary_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        writeln!(out, "pairs evaluated     {}", self.n_pairs).unwrap();
        writeln!(
            out,
            "unmatched           {} predictions, {} gold",
            self.unmatched_predictions, self.unmatched_gold
        )
        .unwrap();
        writeln!(out, "accuracy            {:.3}", self.overall_accuracy).unwrap();
        writeln!(out, "cohen kappa         {:.3}", self.kappa).unwrap();
        writeln!(
            out,
            "missing (No) sens.  {}",
            fmt_opt(self.missing_detection.sensitivity)
        )
        .unwrap();
        writeln!(
            out,
            "missing (No) spec.  {}",
            fmt_opt(self.missing_detection.specificity)
        )
        .unwrap();
        writeln!(out, "\ngold \\ predicted    Yes      No  Unclear").unwrap();
        for v in Verdict::ALL {
            let row = self.confusion[v.index()];
            writeln!(out, "{:<16} {:>6} {:>7} {:>8}", v.as_str(), row[0], row[1], row[2]).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use Verdict::*;

    fn pred(note: &str, q: &str, v: Verdict) -> AuditAnswer {
        AuditAnswer {
            note_id: note.into(),
            question_id: q.into(),
            verdict: v,
            evidence: vec![format!("evidence for {q}")],
            evidence_verified: vec![true],
            justification: "j".into(),
            flags: BTreeSet::new(),
        }
    }

    fn gold(note: &str, q: &str, v: Verdict, annotator: &str) -> GoldLabel {
        GoldLabel {
            note_id: note.into(),
            question_id: q.into(),
            verdict: v,
            annotator_id: annotator.into(),
            note: None,
        }
    }

    #[test]
    fn perfect_agreement() {
        let vs = [Yes, No, Unclear, Yes];
        let p: Vec<_> = vs.iter().enumerate().map(|(i, v)| pred("n", &format!("q{i}"), *v)).collect();
        let g: Vec<_> = vs.iter().enumerate().map(|(i, v)| gold("n", &format!("q{i}"), *v, "a")).collect();
        let r = evaluate(&p, &g, UnclearPolicy::Negative).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.kappa, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(r.confusion[i][j], 0);
                }
            }
        }
        assert!(disagreement_export(&p, &g).is_empty());
    }

    #[test]
    fn hand_counted_two_by_two() {
        let g_v = [No, No, Yes, Yes];
        let p_v = [No, Yes, Yes, Yes];
        let p: Vec<_> = p_v.iter().enumerate().map(|(i, v)| pred("n", &format!("q{i}"), *v)).collect();
        let g: Vec<_> = g_v.iter().enumerate().map(|(i, v)| gold("n", &format!("q{i}"), *v, "a")).collect();
        let r = evaluate(&p, &g, UnclearPolicy::Negative).unwrap();
        assert_eq!(r.missing_detection.sensitivity, Some(0.5));
        assert_eq!(r.missing_detection.specificity, Some(1.0));
        assert_eq!(r.overall_accuracy, 0.75);
    }

    #[test]
    fn disjoint_keys_fail() {
        let p = vec![pred("n1", "q", Yes)];
        let g = vec![gold("n2", "q", Yes, "a")];
        assert!(matches!(
            evaluate(&p, &g, UnclearPolicy::Negative),
            Err(EvaluationError::EmptyIntersection)
        ));
    }

    #[test]
    fn unmatched_keys_are_counted_not_scored() {
        let p = vec![pred("n", "q1", Yes), pred("n", "q2", No)];
        let g = vec![gold("n", "q1", Yes, "a"), gold("n", "q3", No, "a")];
        let r = evaluate(&p, &g, UnclearPolicy::Negative).unwrap();
        assert_eq!((r.n_pairs, r.unmatched_predictions, r.unmatched_gold), (1, 1, 1));
    }

    #[test]
    fn unclear_policy_changes_two_by_two() {
        let p = vec![pred("n", "q1", Unclear), pred("n", "q2", No)];
        let g = vec![gold("n", "q1", No, "a"), gold("n", "q2", No, "a")];
        let neg = evaluate(&p, &g, UnclearPolicy::Negative).unwrap();
        assert_eq!(neg.missing_detection.sensitivity, Some(0.5));
        let pos = evaluate(&p, &g, UnclearPolicy::Positive).unwrap();
        assert_eq!(pos.missing_detection.sensitivity, Some(1.0));
        let excl = evaluate(&p, &g, UnclearPolicy::Exclude).unwrap();
        assert_eq!(excl.missing_detection.true_positive + excl.missing_detection.false_negative, 1);
    }

    #[test]
    fn majority_vote_with_tie_fallback() {
        let labels = vec![
            gold("n", "q1", Yes, "a"),
            gold("n", "q1", Yes, "b"),
            gold("n", "q1", No, "c"),
            gold("n", "q2", Yes, "a"),
            gold("n", "q2", No, "b"),
        ];
        let m = majority_vote(&labels);
        assert_eq!(m[&("n".to_string(), "q1".to_string())], Yes);
        assert_eq!(m[&("n".to_string(), "q2".to_string())], Unclear);
        let per = evaluate_per_annotator(&[pred("n", "q1", Yes)], &labels, UnclearPolicy::Negative);
        assert_eq!(per.len(), 3);
        assert_eq!(per["c"].as_ref().unwrap().overall_accuracy, 0.0);
    }

    #[test]
    fn duplicate_label_rejected() {
        let g = vec![gold("n", "q", Yes, "a"), gold("n", "q", No, "a")];
        assert!(matches!(
            evaluate(&[pred("n", "q", Yes)], &g, UnclearPolicy::Negative),
            Err(EvaluationError::DuplicateLabel { .. })
        ));
    }

    #[test]
    fn disagreements_sorted_with_evidence() {
        let p = vec![pred("n2", "q2", Yes), pred("n1", "q2", Yes), pred("n1", "q1", No)];
        let g = vec![gold("n2", "q2", No, "a"), gold("n1", "q2", No, "a"), gold("n1", "q1", Yes, "a")];
        let rows = disagreement_export(&p, &g);
        let keys: Vec<_> = rows.iter().map(|r| (r.question_id.as_str(), r.note_id.as_str())).collect();
        assert_eq!(keys, vec![("q1", "n1"), ("q2", "n1"), ("q2", "n2")]);
        assert_eq!(rows[0].evidence, vec!["evidence for q1".to_string()]);
    }

    #[test]
    fn order_of_inputs_does_not_matter() {
        let mut p = vec![pred("n", "q1", Yes), pred("n", "q2", No), pred("n", "q3", Unclear)];
        let mut g = vec![gold("n", "q1", Yes, "a"), gold("n", "q2", Yes, "a"), gold("n", "q3", No, "a")];
        let a = evaluate(&p, &g, UnclearPolicy::Negative).unwrap();
        p.reverse();
        g.rotate_left(1);
        assert_eq!(evaluate(&p, &g, UnclearPolicy::Negative).unwrap(), a);
    }
}
