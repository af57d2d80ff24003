use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use discharge_audit::aggregate::{aggregate, emit_report, unclear_ranking};
use discharge_audit::checklist::AuditChecklist;
use discharge_audit::cohort::cohort_stats;
use discharge_audit::config::{AuditConfig, BackendChoice};
use discharge_audit::evaluation::{disagreement_export, evaluate, load_gold_labels, UnclearPolicy};
use discharge_audit::server::{router, serve_blocking, ServiceState};
use discharge_audit::service::{
    backend_for, context_for, load_cohort, record_run, run_audit, select_records,
    store_path, write_json,
};
use discharge_audit::store::{latest_per_note, AdjudicationLog, ResultStore, ADJUDICATIONS_FILE};

type CliResult = Result<(), Box<dyn std::error::Error>>;

/// Audit discharge summaries against a structured completeness checklist.
#[derive(Parser)]
#[command(name = "discharge-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Negative,
    Positive,
    Exclude,
}

impl From<Policy> for UnclearPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Negative => UnclearPolicy::Negative,
            Policy::Positive => UnclearPolicy::Positive,
            Policy::Exclude => UnclearPolicy::Exclude,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Show the checklist and its batch layout.
    Checklist {
        /// Checklist JSON to validate instead of the bundled one.
        #[arg(long)]
        path: Option<PathBuf>,
        /// Print the checklist as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Draw the configured stratified sample and write its manifest.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Manifest path; defaults to sample_manifest.csv in the output directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Audit the selected notes and write results, report and run summary.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Like `audit`, served entirely from a recording.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Audit against the live endpoint and save every exchange for replay.
    Record {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        recording: PathBuf,
    },
    /// Rebuild the cohort report from a result store.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Only results from this run; otherwise the latest per note.
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Checklist used for question labels.
        #[arg(long)]
        checklist: Option<PathBuf>,
    },
    /// Compare stored verdicts with gold labels.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, value_enum, default_value = "negative")]
        unclear_policy: Policy,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the review API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bind: Option<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Checklist { path, json } => checklist(path, json),
        Command::Sample { config, manifest } => sample(&config, manifest),
        Command::Audit {
            config,
            output_dir,
            run_id,
        } => {
            let cfg = with_overrides(AuditConfig::load(&config)?, output_dir, run_id);
            audit(&cfg)
        }
        Command::Replay {
            config,
            recording,
            output_dir,
            run_id,
        } => {
            let mut cfg = with_overrides(AuditConfig::load(&config)?, output_dir, run_id);
            cfg.backend = BackendChoice::Replay;
            cfg.recording = Some(recording);
            audit(&cfg)
        }
        Command::Record { config, recording } => record(&config, &recording),
        Command::Report {
            results,
            run_id,
            out,
            top_k,
            checklist,
        } => report(&results, run_id.as_deref(), out, top_k, checklist),
        Command::Eval {
            results,
            gold,
            run_id,
            unclear_policy,
            out,
        } => eval(&results, &gold, run_id.as_deref(), unclear_policy.into(), out),
        Command::Serve { config, bind } => serve(&config, bind),
    }
}

fn with_overrides(mut cfg: AuditConfig, output_dir: Option<PathBuf>, run_id: Option<String>) -> AuditConfig {
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if run_id.is_some() {
        cfg.run_id = run_id;
    }
    cfg
}

fn checklist(path: Option<PathBuf>, json: bool) -> CliResult {
    let checklist = match path {
        Some(p) => AuditChecklist::load(p)?,
        None => AuditChecklist::discharged(),
    };
    if json {
        println!("{}", checklist.to_json());
        return Ok(());
    }
    println!("{checklist}");
    for batch in checklist.batch_partition() {
        let ids: Vec<&str> = batch.questions.iter().map(|q| q.id.as_str()).collect();
        println!("batch {} ({} questions): {}", batch.batch_id, ids.len(), ids.join(" "));
    }
    Ok(())
}

fn sample(config: &Path, manifest: Option<PathBuf>) -> CliResult {
    let cfg = AuditConfig::load(config)?;
    if cfg.cohort.is_none() {
        return Err("config has no [cohort] section to sample with".into());
    }
    let records = load_cohort(&cfg)?;
    let selection = select_records(&cfg, &records)?;
    let sample = selection.sample.expect("cohort section present");
    let path = manifest.unwrap_or_else(|| cfg.output_dir.join("sample_manifest.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    sample.write_manifest(std::fs::File::create(&path)?)?;
    println!("{:<40} {:>10} {:>6}", "stratum", "population", "quota");
    for a in &sample.allocation {
        println!("{:<40} {:>10} {:>6}", a.stratum, a.population, a.quota);
    }
    let stats = cohort_stats(&selection.records)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    println!("manifest written to {}", path.display());
    Ok(())
}

fn audit(cfg: &AuditConfig) -> CliResult {
    let records = load_cohort(cfg)?;
    let selection = select_records(cfg, &records)?;
    let ctx = context_for(cfg, backend_for(cfg)?)?;
    let (summary, run) = run_audit(cfg, &ctx, &selection.records)?;
    println!(
        "run {}: {} notes ({} skipped), {} inference calls, mean score {:.2}/{}",
        summary.run_id,
        summary.n_notes,
        summary.n_skipped,
        summary.inference_calls,
        summary.score_mean,
        run.report.total_questions,
    );
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn record(config: &Path, recording: &Path) -> CliResult {
    let cfg = AuditConfig::load(config)?;
    let records = load_cohort(&cfg)?;
    let selection = select_records(&cfg, &records)?;
    let (entries, run) = record_run(&cfg, &selection.records, recording)?;
    println!(
        "recorded {entries} exchanges from {} inference calls to {}",
        run.inference_calls,
        recording.display()
    );
    Ok(())
}

fn report(results: &Path, run_id: Option<&str>, out: Option<PathBuf>, top_k: usize, checklist: Option<PathBuf>) -> CliResult {
    let checklist = match checklist {
        Some(p) => AuditChecklist::load(p)?,
        None => AuditChecklist::discharged(),
    };
    let stored = ResultStore::new(results).load()?;
    let latest: Vec<_> = latest_per_note(stored, run_id).into_iter().map(|s| s.result).collect();
    let report = aggregate(&latest)?;
    if let Some(dir) = out {
        emit_report(&report, &dir)?;
        println!("report written to {}", dir.display());
    }
    print!("{}", report.render_histogram(40));
    println!(
        "mean {:.2} ({:.1}% of {}), range {}-{}, 95th percentile {}",
        report.score_mean,
        report.score_pct_of_total,
        report.total_questions,
        report.score_min,
        report.score_max,
        report.top5_threshold
    );
    println!("\nMost often unclear:");
    let ranking: Vec<_> = unclear_ranking(&report, top_k)
        .into_iter()
        .filter(|(_, rate)| *rate > 0.0)
        .collect();
    if ranking.is_empty() {
        println!("    (no Unclear verdicts)");
    }
    for (i, (id, rate)) in ranking.into_iter().enumerate() {
        let label = checklist
            .question(&id)
            .map(|q| q.report_label.clone().unwrap_or_else(|| q.topic.clone()))
            .unwrap_or_default();
        println!("{:>2}. {:<6} {:>6.1}%  {}", i + 1, id, rate * 100.0, label);
    }
    Ok(())
}

fn eval(results: &Path, gold: &Path, run_id: Option<&str>, policy: UnclearPolicy, out: Option<PathBuf>) -> CliResult {
    let stored = ResultStore::new(results).load()?;
    let answers: Vec<_> = latest_per_note(stored, run_id)
        .into_iter()
        .flat_map(|s| s.result.answers)
        .collect();
    let labels = load_gold_labels(gold)?;
    let report = evaluate(&answers, &labels, policy)?;
    print!("{}", report.summary_table());
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        write_json(&dir.join("evaluation.json"), &report)?;
        let mut w = csv::Writer::from_path(dir.join("disagreements.csv"))?;
        w.write_record(["note_id", "question_id", "gold", "predicted", "evidence", "justification"])?;
        for d in disagreement_export(&answers, &labels) {
            w.write_record([
                d.note_id.as_str(),
                &d.question_id,
                d.gold.as_str(),
                d.predicted.as_str(),
                &d.evidence.join(" | "),
                &d.justification,
            ])?;
        }
        w.flush()?;
        println!("evaluation written to {}", dir.display());
    }
    Ok(())
}

fn serve(config: &Path, bind: Option<String>) -> CliResult {
    let cfg = AuditConfig::load(config)?;
    let ctx = Arc::new(context_for(&cfg, backend_for(&cfg)?)?);
    let state = ServiceState::new(
        ctx,
        ResultStore::new(store_path(&cfg)),
        AdjudicationLog::new(cfg.output_dir.join(ADJUDICATIONS_FILE)),
        cfg.server.bearer_token.clone(),
        cfg.server.sync_char_limit,
    );
    let bind = bind.unwrap_or(cfg.server.bind.clone());
    let listener = std::net::TcpListener::bind(&bind)?;
    println!("serving review API on http://{}", listener.local_addr()?);
    serve_blocking(listener, router(Arc::new(state)))?;
    Ok(())
}
