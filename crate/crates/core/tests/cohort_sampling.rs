mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use common::fixture;
use discharge_audit::cohort::{
    cohort_stats, filter_eligible, largest_remainder, load_records, stratified_sample, stratum_key,
    CohortError, CohortSpec, DischargeRecord, Gender, IngestionConfig, StratumKey,
};
use proptest::prelude::*;

fn fixture_records() -> Vec<DischargeRecord> {
    load_records(
        fixture("cohort/notes.csv"),
        fixture("cohort/admissions.csv"),
        &IngestionConfig::default(),
    )
    .unwrap()
}

/// Demographics computed directly from the CSV text.
struct RawStats {
    notes: usize,
    patients: usize,
    age_min: u32,
    age_max: u32,
    age_mean: f64,
    male_pct: f64,
    icu_mean: f64,
    los_mean: f64,
}

fn raw_stats() -> RawStats {
    let mut notes = csv::Reader::from_path(fixture("cohort/notes.csv")).unwrap();
    let subject_of: HashMap<String, String> = notes
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[2].to_string(), r[1].to_string())
        })
        .collect();
    let mut adm = csv::Reader::from_path(fixture("cohort/admissions.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = adm.records().map(|r| r.unwrap()).collect();
    let ages: Vec<u32> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let mut gender_by_subject = BTreeMap::new();
    for r in &rows {
        gender_by_subject.insert(subject_of[&r[0]].clone(), r[2].to_string());
    }
    let male = gender_by_subject.values().filter(|g| *g == "M").count();
    let icu: Vec<f64> = rows
        .iter()
        .filter(|r| &r[4] == "1" && !r[5].is_empty())
        .map(|r| r[5].parse().unwrap())
        .collect();
    let los: f64 = rows.iter().map(|r| r[6].parse::<f64>().unwrap()).sum();
    RawStats {
        notes: rows.len(),
        patients: gender_by_subject.len(),
        age_min: *ages.iter().min().unwrap(),
        age_max: *ages.iter().max().unwrap(),
        age_mean: ages.iter().sum::<u32>() as f64 / ages.len() as f64,
        male_pct: 100.0 * male as f64 / gender_by_subject.len() as f64,
        icu_mean: icu.iter().sum::<f64>() / icu.len() as f64,
        los_mean: los / rows.len() as f64,
    }
}

#[test]
fn fixture_demographics_match_reference_cohort() {
    let stats = cohort_stats(&fixture_records()).unwrap();
    assert_eq!(stats.n_notes, 200);
    assert_eq!(stats.n_patients, 196);
    assert_eq!((stats.age_min, stats.age_max), (18, 91));
    assert!((stats.age_mean - 58.96).abs() <= 0.01, "{}", stats.age_mean);
    assert!((stats.gender_pct["male"] - 55.61).abs() <= 0.01);
    assert!((stats.gender_pct["female"] - 44.38).abs() <= 0.01);
    assert!((stats.mean_icu_los.unwrap() - 3.92).abs() <= 0.01);
    assert!((stats.mean_admission_los - 7.56).abs() <= 0.01);
    assert_eq!(stats.icu_los_missing, 1);
}

#[test]
fn fixture_demographics_match_raw_oracle() {
    let stats = cohort_stats(&fixture_records()).unwrap();
    let raw = raw_stats();
    assert_eq!(stats.n_notes, raw.notes);
    assert_eq!(stats.n_patients, raw.patients);
    assert_eq!((stats.age_min, stats.age_max), (raw.age_min, raw.age_max));
    assert!((stats.age_mean - raw.age_mean).abs() < 1e-9);
    assert!((stats.gender_pct["male"] - raw.male_pct).abs() < 1e-9);
    assert!((stats.mean_icu_los.unwrap() - raw.icu_mean).abs() < 1e-9);
    assert!((stats.mean_admission_los - raw.los_mean).abs() < 1e-9);
}

#[test]
fn stats_do_not_depend_on_input_order() {
    let mut records = fixture_records();
    let a = cohort_stats(&records).unwrap();
    records.reverse();
    assert_eq!(a, cohort_stats(&records).unwrap());
}

#[test]
fn orphan_notes_fail_the_join() {
    let dir = tempfile::tempdir().unwrap();
    let notes = dir.path().join("notes.csv");
    let adm = dir.path().join("adm.csv");
    std::fs::write(&notes, "note_id,subject_id,hadm_id,text\nn1,s1,h1,x\nn2,s2,h9,y\n").unwrap();
    std::fs::write(
        &adm,
        "hadm_id,age,gender,discharge_location,icu_stay,icu_los,admission_los,hospital_expire_flag\nh1,50,F,HOME,0,,3,0\n",
    )
    .unwrap();
    match load_records(&notes, &adm, &IngestionConfig::default()) {
        Err(CohortError::Join { orphans }) => assert_eq!(orphans, vec!["h9".to_string()]),
        other => panic!("expected join error, got {other:?}"),
    }
}

fn population(n: usize) -> Vec<DischargeRecord> {
    let locations = ["HOME", "HOME HEALTH CARE", "SKILLED NURSING FACILITY", "REHAB", "DIED"];
    (0..n)
        .map(|i| DischargeRecord {
            note_id: format!("n{i:05}"),
            subject_id: format!("s{}", i / 2),
            hadm_id: format!("h{i}"),
            text: format!("summary {i}"),
            age: 14 + (i * 7 % 80) as u32,
            gender: if i % 3 == 0 { Gender::Male } else { Gender::Female },
            discharge_location: locations[(i * 13) % locations.len()].to_string(),
            icu_stay: i % 4 == 0,
            icu_los: (i % 4 == 0).then_some(2.0),
            admission_los: 5.0,
            died_in_hospital: locations[(i * 13) % locations.len()] == "DIED",
        })
        .collect()
}

#[test]
fn eligibility_excludes_minors_and_deaths() {
    let pop = population(500);
    let spec = CohortSpec::new(10, 1);
    let eligible = filter_eligible(&pop, &spec);
    assert!(!eligible.is_empty() && eligible.len() < pop.len());
    assert!(eligible.iter().all(|r| r.age >= 18 && !r.died_in_hospital));
}

#[test]
fn infeasible_request_reports_strata() {
    let pop = population(20);
    match stratified_sample(&pop, &CohortSpec::new(21, 0)) {
        Err(CohortError::Infeasible { requested, available, strata }) => {
            assert_eq!((requested, available), (21, 20));
            assert_eq!(strata.iter().map(|s| s.1).sum::<usize>(), 20);
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn stratum_key_format() {
    let r = &population(1)[0];
    assert_eq!(
        stratum_key(r, &[StratumKey::DischargeLocation, StratumKey::IcuStay]),
        format!("discharge_location={};icu_stay=1", r.discharge_location)
    );
    assert_eq!(stratum_key(r, &[]), "all");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn largest_remainder_is_tight(pops in prop::collection::vec(0usize..60, 1..12), frac in 0.0f64..=1.0) {
        let total_pop: usize = pops.iter().sum();
        prop_assume!(total_pop > 0);
        let n = (total_pop as f64 * frac).round() as usize;
        let quotas = largest_remainder(&pops, n);
        prop_assert_eq!(quotas.iter().sum::<usize>(), n);
        for (q, p) in quotas.iter().zip(&pops) {
            let exact = n as f64 * *p as f64 / total_pop as f64;
            prop_assert!((*q as f64 - exact).abs() < 1.0, "quota {} vs exact {}", q, exact);
            prop_assert!(q <= p);
        }
    }

    #[test]
    fn sample_is_deterministic_proportional_subset(size in 60usize..400, n in 1usize..50, seed in any::<u64>()) {
        let pop = population(size);
        let spec = CohortSpec::new(n, seed);
        let eligible = filter_eligible(&pop, &spec);
        prop_assume!(n <= eligible.len());
        let a = stratified_sample(&eligible, &spec).unwrap();
        let b = stratified_sample(&eligible, &spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.entries.len(), n);
        let ids: BTreeSet<&str> = a.note_ids().into_iter().collect();
        prop_assert_eq!(ids.len(), n);
        let pool: BTreeSet<&str> = eligible.iter().map(|r| r.note_id.as_str()).collect();
        prop_assert!(ids.is_subset(&pool));
        let mut shuffled = eligible.clone();
        shuffled.reverse();
        prop_assert_eq!(&stratified_sample(&shuffled, &spec).unwrap(), &a);
        for alloc in &a.allocation {
            let drawn = a.entries.iter().filter(|e| e.stratum == alloc.stratum).count();
            prop_assert_eq!(drawn, alloc.quota);
            let exact = n as f64 * alloc.population as f64 / eligible.len() as f64;
            prop_assert!((alloc.quota as f64 - exact).abs() < 1.0);
        }
    }
}
