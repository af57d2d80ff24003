//! Replays the ten-note fixture and scores its verdicts against two nurse
//! annotators, pooled by majority vote and per annotator.

use discharge_audit::config::AuditConfig;
use discharge_audit::evaluation::{evaluate, evaluate_per_annotator, load_gold_labels, UnclearPolicy};
use discharge_audit::pipeline::run_cohort;
use discharge_audit::service::{backend_for, context_for, load_cohort, select_records};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/replay");
    let cfg = AuditConfig::load(format!("{dir}/audit.toml"))?;
    let records = load_cohort(&cfg)?;
    let selection = select_records(&cfg, &records)?;
    let ctx = context_for(&cfg, backend_for(&cfg)?)?;
    let run = run_cohort(&ctx, &selection.records, cfg.workers, None)?;
    let answers: Vec<_> = run.results.into_iter().flat_map(|r| r.answers).collect();

    let labels = load_gold_labels(format!("{dir}/gold.csv"))?;
    for policy in [UnclearPolicy::Negative, UnclearPolicy::Positive, UnclearPolicy::Exclude] {
        println!("== unclear counted as {policy:?} ==");
        print!("{}", evaluate(&answers, &labels, policy)?.summary_table());
    }
    for (annotator, report) in evaluate_per_annotator(&answers, &labels, UnclearPolicy::Negative) {
        match report {
            Ok(r) => println!("{annotator}: accuracy {:.3}, kappa {:.3}", r.overall_accuracy, r.kappa),
            Err(e) => println!("{annotator}: {e}"),
        }
    }
    Ok(())
}
