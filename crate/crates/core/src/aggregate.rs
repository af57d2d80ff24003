//! Cohort-level statistics over per-note audit results.
//!
//! Everything here is derived from additive counts (a score histogram and
//! per-question verdict tallies), so shards can be accumulated separately and
//! merged. Percentiles use the nearest-rank definition: the `p`th percentile
//! of `n` sorted scores is the score at 1-based rank `ceil(p * n / 100)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{AuditResult, Verdict};

/// Percentiles reported in [`CohortReport::percentile_table`].
pub const PERCENTILES: [u32; 7] = [5, 10, 25, 50, 75, 90, 95];

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("no audited summaries to aggregate")]
    Empty,
    #[error("results mix checklist versions {expected:?} and {found:?}")]
    MixedVersion { expected: String, found: String },
    #[error("note {note_id} has {found} answers, expected {expected}")]
    QuestionCount {
        note_id: String,
        expected: usize,
        found: usize,
    },
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRates {
    pub question_id: String,
    pub yes: usize,
    pub no: usize,
    pub unclear: usize,
    pub yes_rate: f64,
    pub no_rate: f64,
    pub unclear_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub checklist_version: String,
    pub n_summaries: usize,
    pub n_skipped: usize,
    pub total_questions: usize,
    pub score_mean: f64,
    pub score_min: usize,
    pub score_max: usize,
    /// `score_mean / total_questions`, as a percentage.
    pub score_pct_of_total: f64,
    pub percentile_table: BTreeMap<u32, usize>,
    /// The 95th percentile score; at most 5% of summaries score above it.
    pub top5_threshold: usize,
    pub histogram: BTreeMap<usize, usize>,
    pub per_question: Vec<QuestionRates>,
    /// All question ids, highest unclear rate first.
    pub unclear_ranking: Vec<String>,
}

/// Running totals for a shard of results.
#[derive(Debug, Clone, Default)]
pub struct CohortAccumulator {
    version: Option<String>,
    total_questions: Option<usize>,
    histogram: BTreeMap<usize, usize>,
    n_skipped: usize,
    question_order: Vec<String>,
    tallies: HashMap<String, [usize; 3]>,
}

impl CohortAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_version(&mut self, version: &str) -> Result<(), AggregateError> {
        match &self.version {
            Some(v) if v != version => Err(AggregateError::MixedVersion {
                expected: v.clone(),
                found: version.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.version = Some(version.to_string());
                Ok(())
            }
        }
    }

    pub fn add(&mut self, result: &AuditResult) -> Result<(), AggregateError> {
        self.check_version(&result.checklist_version)?;
        if result.skipped {
            self.n_skipped += 1;
            return Ok(());
        }
        let n = result.answers.len();
        match self.total_questions {
            Some(expected) if expected != n => {
                return Err(AggregateError::QuestionCount {
                    note_id: result.note_id.clone(),
                    expected,
                    found: n,
                })
            }
            _ => self.total_questions = Some(n),
        }
        *self.histogram.entry(result.completeness_score).or_default() += 1;
        for a in &result.answers {
            let tally = self.tallies.entry(a.question_id.clone()).or_insert_with(|| {
                self.question_order.push(a.question_id.clone());
                [0; 3]
            });
            tally[a.verdict.index()] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: CohortAccumulator) -> Result<(), AggregateError> {
        if let Some(v) = &other.version {
            self.check_version(v)?;
        }
        if let (Some(a), Some(b)) = (self.total_questions, other.total_questions) {
            if a != b {
                return Err(AggregateError::QuestionCount {
                    note_id: "<merged shard>".into(),
                    expected: a,
                    found: b,
                });
            }
        }
        self.total_questions = self.total_questions.or(other.total_questions);
        self.n_skipped += other.n_skipped;
        for (score, count) in other.histogram {
            *self.histogram.entry(score).or_default() += count;
        }
        for id in other.question_order {
            let counts = other.tallies[&id];
            let tally = self.tallies.entry(id.clone()).or_insert_with(|| {
                self.question_order.push(id.clone());
                [0; 3]
            });
            for (t, c) in tally.iter_mut().zip(counts) {
                *t += c;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<CohortReport, AggregateError> {
        let n: usize = self.histogram.values().sum();
        if n == 0 {
            return Err(AggregateError::Empty);
        }
        let total_questions = self.total_questions.unwrap_or(0);
        let score_sum: usize = self.histogram.iter().map(|(s, c)| s * c).sum();
        let score_mean = score_sum as f64 / n as f64;
        let score_min = *self.histogram.keys().next().unwrap();
        let score_max = *self.histogram.keys().next_back().unwrap();

        let percentile_table: BTreeMap<u32, usize> = PERCENTILES
            .iter()
            .map(|&p| (p, nearest_rank(&self.histogram, n, p)))
            .collect();

        let per_question: Vec<QuestionRates> = self
            .question_order
            .iter()
            .map(|id| {
                let [yes, no, unclear] = self.tallies[id];
                let rate = |c: usize| c as f64 / n as f64;
                QuestionRates {
                    question_id: id.clone(),
                    yes,
                    no,
                    unclear,
                    yes_rate: rate(yes),
                    no_rate: rate(no),
                    unclear_rate: rate(unclear),
                }
            })
            .collect();
        let unclear_ranking = ranked(&per_question)
            .into_iter()
            .map(|q| q.question_id.clone())
            .collect();

        Ok(CohortReport {
            checklist_version: self.version.unwrap_or_default(),
            n_summaries: n,
            n_skipped: self.n_skipped,
            total_questions,
            score_mean,
            score_min,
            score_max,
            score_pct_of_total: if total_questions == 0 {
                0.0
            } else {
                100.0 * score_mean / total_questions as f64
            },
            top5_threshold: percentile_table[&95],
            percentile_table,
            histogram: self.histogram,
            per_question,
            unclear_ranking,
        })
    }
}

fn nearest_rank(histogram: &BTreeMap<usize, usize>, n: usize, p: u32) -> usize {
    let rank = (p as usize * n).div_ceil(100).max(1);
    let mut seen = 0;
    for (&score, &count) in histogram {
        seen += count;
        if seen >= rank {
            return score;
        }
    }
    *histogram.keys().next_back().unwrap()
}

fn ranked(per_question: &[QuestionRates]) -> Vec<&QuestionRates> {
    let mut sorted: Vec<&QuestionRates> = per_question.iter().collect();
    // Every rate shares the denominator, so counts order the rates exactly.
    sorted.sort_by(|a, b| b.unclear.cmp(&a.unclear).then(a.question_id.cmp(&b.question_id)));
    sorted
}

/// Cohort statistics over non-skipped results; skipped ones are only counted.
pub fn aggregate(results: &[AuditResult]) -> Result<CohortReport, AggregateError> {
    let mut acc = CohortAccumulator::new();
    for r in results {
        acc.add(r)?;
    }
    acc.finish()
}

/// Up to `top_k` questions by unclear rate, descending; ties by id.
pub fn unclear_ranking(report: &CohortReport, top_k: usize) -> Vec<(String, f64)> {
    ranked(&report.per_question)
        .into_iter()
        .take(top_k)
        .map(|q| (q.question_id.clone(), q.unclear_rate))
        .collect()
}

pub const REPORT_FILE: &str = "cohort_report.json";
pub const HISTOGRAM_FILE: &str = "score_histogram.csv";
pub const RATES_FILE: &str = "question_rates.csv";

impl CohortReport {
    /// `score,count` for every score from 0 to the question count.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("score,count\n");
        for score in 0..=self.total_questions.max(self.score_max) {
            let count = self.histogram.get(&score).copied().unwrap_or(0);
            writeln!(out, "{score},{count}").unwrap();
        }
        out
    }

    pub fn rates_csv(&self) -> String {
        let rank: HashMap<&str, usize> = self
            .unclear_ranking
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i + 1))
            .collect();
        let mut out = String::from("question_id,yes_rate,no_rate,unclear_rate,unclear_rank\n");
        for q in &self.per_question {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                q.question_id, q.yes_rate, q.no_rate, q.unclear_rate, rank[q.question_id.as_str()]
            )
            .unwrap();
        }
        out
    }

    /// Horizontal bar chart of the score distribution.
    pub fn render_histogram(&self, width: usize) -> String {
        let peak = self.histogram.values().copied().max().unwrap_or(1).max(1);
        let mut out = format!(
            "Completeness scores (n = {}, mean {:.1}/{})\n",
            self.n_summaries, self.score_mean, self.total_questions
        );
        for score in self.score_min..=self.score_max {
            let count = self.histogram.get(&score).copied().unwrap_or(0);
            let bar = "#".repeat((count * width).div_ceil(peak));
            writeln!(out, "{score:>3} | {bar:<width$} {count}").unwrap();
        }
        out
    }
}

/// Writes the report JSON and the two CSV tables into `out_dir`.
pub fn emit_report(report: &CohortReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, AggregateError> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)? + "\n";
    let files = [
        (REPORT_FILE, json),
        (HISTOGRAM_FILE, report.histogram_csv()),
        (RATES_FILE, report.rates_csv()),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Fraction of summaries for which a question got the given verdict.
pub fn verdict_rate(report: &CohortReport, question_id: &str, verdict: Verdict) -> Option<f64> {
    report
        .per_question
        .iter()
        .find(|q| q.question_id == question_id)
        .map(|q| match verdict {
            Verdict::Yes => q.yes_rate,
            Verdict::No => q.no_rate,
            Verdict::Unclear => q.unclear_rate,
        })
}
