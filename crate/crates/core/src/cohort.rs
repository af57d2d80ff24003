//! Cohort ingestion: joining notes with admissions, eligibility, stratified
//! sampling and descriptive statistics.
//!
//! # Reproducible sampling
//!
//! Within-stratum selection does not depend on any library RNG. Each stratum's
//! records are sorted by `note_id` and shuffled with a Fisher-Yates pass
//! (`i` from `len - 1` down to `1`, `j = next_u64() % (i + 1)`) driven by
//! SplitMix64:
//!
//! ```text
//! state = state + 0x9E3779B97F4A7C15           (wrapping)
//! z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! ```
//!
//! The generator for a stratum starts from `seed ^ fnv1a64(stratum_key)`, with
//! FNV-1a offset basis `0xCBF29CE484222325` and prime `0x100000001B3`. The first
//! `quota` records of the shuffled stratum are selected.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: String, column: String },
    #[error("{path} row {row}: bad value {value:?} in column {column:?}")]
    BadField {
        path: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate {kind} id {id:?}")]
    Duplicate { kind: &'static str, id: String },
    #[error("notes reference admissions that do not exist: {orphans:?}")]
    Join { orphans: Vec<String> },
    #[error("no records")]
    Empty,
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("cannot draw {requested} from {available} eligible records (per stratum: {strata:?})")]
    Infeasible {
        requested: usize,
        available: usize,
        strata: Vec<(String, usize)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub fn parse(raw: &str) -> Self {
        match raw.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Gender::Male,
            "f" | "female" => Gender::Female,
            _ => Gender::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DischargeRecord {
    pub note_id: String,
    pub subject_id: String,
    pub hadm_id: String,
    pub text: String,
    pub age: u32,
    pub gender: Gender,
    pub discharge_location: String,
    pub icu_stay: bool,
    pub icu_los: Option<f64>,
    pub admission_los: f64,
    pub died_in_hospital: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NotesColumns {
    pub note_id: String,
    pub subject_id: String,
    pub hadm_id: String,
    pub text: String,
}

impl Default for NotesColumns {
    fn default() -> Self {
        Self {
            note_id: "note_id".into(),
            subject_id: "subject_id".into(),
            hadm_id: "hadm_id".into(),
            text: "text".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmissionsColumns {
    pub hadm_id: String,
    pub age: String,
    pub gender: String,
    pub discharge_location: String,
    pub icu_stay: String,
    pub icu_los: String,
    pub admission_los: String,
    pub hospital_expire_flag: String,
}

impl Default for AdmissionsColumns {
    fn default() -> Self {
        Self {
            hadm_id: "hadm_id".into(),
            age: "age".into(),
            gender: "gender".into(),
            discharge_location: "discharge_location".into(),
            icu_stay: "icu_stay".into(),
            icu_los: "icu_los".into(),
            admission_los: "admission_los".into(),
            hospital_expire_flag: "hospital_expire_flag".into(),
        }
    }
}

/// Column names and value conventions of the source tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestionConfig {
    pub notes: NotesColumns,
    pub admissions: AdmissionsColumns,
    /// `discharge_location` values that mean the patient died in hospital.
    pub death_locations: Vec<String>,
    /// Accepted spellings of a true boolean flag (compared case-insensitively).
    pub true_values: Vec<String>,
}

impl Default for IngestionConfig {
    fn default() -> Self {
        Self {
            notes: NotesColumns::default(),
            admissions: AdmissionsColumns::default(),
            death_locations: vec!["DIED".into()],
            true_values: ["1", "true", "t", "yes", "y"].map(String::from).to_vec(),
        }
    }
}

impl IngestionConfig {
    fn is_true(&self, raw: &str) -> bool {
        let raw = raw.trim();
        self.true_values.iter().any(|t| t.eq_ignore_ascii_case(raw))
    }

    fn is_death_location(&self, location: &str) -> bool {
        self.death_locations
            .iter()
            .any(|d| d.eq_ignore_ascii_case(location.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumKey {
    DischargeLocation,
    IcuStay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub sample_size: usize,
    #[serde(default = "default_strata")]
    pub strata_keys: Vec<StratumKey>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_age")]
    pub min_age: u32,
}

fn default_strata() -> Vec<StratumKey> {
    vec![StratumKey::DischargeLocation, StratumKey::IcuStay]
}

fn default_min_age() -> u32 {
    18
}

impl CohortSpec {
    pub fn new(sample_size: usize, seed: u64) -> Self {
        Self {
            sample_size,
            strata_keys: default_strata(),
            seed,
            min_age: default_min_age(),
        }
    }
}

struct Table {
    path: String,
    headers: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CohortError> {
        let display = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|source| match source.kind() {
                csv::ErrorKind::Io(_) => CohortError::Io {
                    path: display.clone(),
                    source: std::io::Error::other(source.to_string()),
                },
                _ => CohortError::Csv {
                    path: display.clone(),
                    source,
                },
            })?;
        let csv_err = |source| CohortError::Csv {
            path: display.clone(),
            source,
        };
        let headers = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Self {
            path: display,
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize, CohortError> {
        self.headers
            .get(name)
            .copied()
            .ok_or_else(|| CohortError::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    fn bad(&self, row: usize, column: &str, value: &str) -> CohortError {
        CohortError::BadField {
            path: self.path.clone(),
            row: row + 1,
            column: column.to_string(),
            value: value.to_string(),
        }
    }
}

struct Admission {
    age: u32,
    gender: Gender,
    discharge_location: String,
    icu_stay: bool,
    icu_los: Option<f64>,
    admission_los: f64,
    expired: bool,
}

fn parse_los(table: &Table, row: usize, column: &str, raw: &str) -> Result<Option<f64>, CohortError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
        _ => Err(table.bad(row, column, raw)),
    }
}

/// Joins the notes table with the admissions table on `hadm_id`.
///
/// Notes whose admission is missing are reported together in a
/// [`CohortError::Join`] rather than dropped.
pub fn load_records(
    notes_path: impl AsRef<Path>,
    admissions_path: impl AsRef<Path>,
    config: &IngestionConfig,
) -> Result<Vec<DischargeRecord>, CohortError> {
    let adm = Table::read(admissions_path.as_ref())?;
    let cols = &config.admissions;
    let a_hadm = adm.column(&cols.hadm_id)?;
    let a_age = adm.column(&cols.age)?;
    let a_gender = adm.column(&cols.gender)?;
    let a_loc = adm.column(&cols.discharge_location)?;
    let a_icu = adm.column(&cols.icu_stay)?;
    let a_icu_los = adm.column(&cols.icu_los)?;
    let a_los = adm.column(&cols.admission_los)?;
    let a_expire = adm.column(&cols.hospital_expire_flag)?;

    let mut admissions = HashMap::new();
    for (i, row) in adm.rows.iter().enumerate() {
        let get = |c: usize| row.get(c).unwrap_or("");
        let hadm_id = get(a_hadm).trim().to_string();
        let age_raw = get(a_age).trim();
        let age = age_raw
            .parse::<u32>()
            .map_err(|_| adm.bad(i, &cols.age, age_raw))?;
        let admission_los = parse_los(&adm, i, &cols.admission_los, get(a_los))?
            .ok_or_else(|| adm.bad(i, &cols.admission_los, get(a_los)))?;
        let record = Admission {
            age,
            gender: Gender::parse(get(a_gender)),
            discharge_location: get(a_loc).trim().to_string(),
            icu_stay: config.is_true(get(a_icu)),
            icu_los: parse_los(&adm, i, &cols.icu_los, get(a_icu_los))?,
            admission_los,
            expired: config.is_true(get(a_expire)),
        };
        if admissions.insert(hadm_id.clone(), record).is_some() {
            return Err(CohortError::Duplicate {
                kind: "admission",
                id: hadm_id,
            });
        }
    }

    let notes = Table::read(notes_path.as_ref())?;
    let ncols = &config.notes;
    let n_id = notes.column(&ncols.note_id)?;
    let n_subject = notes.column(&ncols.subject_id)?;
    let n_hadm = notes.column(&ncols.hadm_id)?;
    let n_text = notes.column(&ncols.text)?;

    let mut seen = HashSet::new();
    let mut orphans = Vec::new();
    let mut records = Vec::with_capacity(notes.rows.len());
    for row in &notes.rows {
        let get = |c: usize| row.get(c).unwrap_or("");
        let note_id = get(n_id).trim().to_string();
        if !seen.insert(note_id.clone()) {
            return Err(CohortError::Duplicate {
                kind: "note",
                id: note_id,
            });
        }
        let hadm_id = get(n_hadm).trim().to_string();
        let Some(a) = admissions.get(&hadm_id) else {
            orphans.push(hadm_id);
            continue;
        };
        records.push(DischargeRecord {
            note_id,
            subject_id: get(n_subject).trim().to_string(),
            hadm_id,
            text: get(n_text).to_string(),
            age: a.age,
            gender: a.gender,
            discharge_location: a.discharge_location.clone(),
            icu_stay: a.icu_stay,
            icu_los: a.icu_los,
            admission_los: a.admission_los,
            died_in_hospital: a.expired || config.is_death_location(&a.discharge_location),
        });
    }
    if !orphans.is_empty() {
        orphans.sort();
        orphans.dedup();
        return Err(CohortError::Join { orphans });
    }
    Ok(records)
}

/// Adults discharged alive with a non-empty summary.
pub fn filter_eligible(records: &[DischargeRecord], spec: &CohortSpec) -> Vec<DischargeRecord> {
    records
        .iter()
        .filter(|r| r.age >= spec.min_age && !r.died_in_hospital && !r.text.trim().is_empty())
        .cloned()
        .collect()
}

pub fn stratum_key(record: &DischargeRecord, keys: &[StratumKey]) -> String {
    if keys.is_empty() {
        return "all".to_string();
    }
    keys.iter()
        .map(|k| match k {
            StratumKey::DischargeLocation => format!("discharge_location={}", record.discharge_location),
            StratumKey::IcuStay => format!("icu_stay={}", u8::from(record.icu_stay)),
        })
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StratumAllocation {
    pub stratum: String,
    pub population: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleEntry {
    pub stratum: String,
    pub record: DischargeRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSample {
    pub allocation: Vec<StratumAllocation>,
    /// Ordered by (stratum, note_id).
    pub entries: Vec<SampleEntry>,
}

impl CohortSample {
    pub fn records(&self) -> Vec<DischargeRecord> {
        self.entries.iter().map(|e| e.record.clone()).collect()
    }

    pub fn note_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.record.note_id.as_str()).collect()
    }

    /// Writes the `note_id,stratum` manifest.
    pub fn write_manifest<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["note_id", "stratum"])?;
        for e in &self.entries {
            w.write_record([e.record.note_id.as_str(), e.stratum.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` across strata of the given sizes.
///
/// Strata must be given in key order; leftover seats go to the largest
/// remainders, ties resolved by that order.
pub fn largest_remainder(populations: &[usize], total: usize) -> Vec<usize> {
    let n: usize = populations.iter().sum();
    if n == 0 {
        return vec![0; populations.len()];
    }
    let mut quotas: Vec<usize> = populations.iter().map(|&p| p * total / n).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..populations.len()).collect();
    // Remainders compared as numerators over the common denominator n.
    order.sort_by(|&a, &b| {
        let ra = populations[a] * total % n;
        let rb = populations[b] * total % n;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        quotas[i] += 1;
    }
    quotas
}

pub fn stratified_sample(
    records: &[DischargeRecord],
    spec: &CohortSpec,
) -> Result<CohortSample, CohortError> {
    if records.is_empty() {
        return Err(CohortError::Empty);
    }
    if spec.sample_size == 0 {
        return Err(CohortError::InvalidSpec("sample_size must be positive".into()));
    }
    let mut strata: BTreeMap<String, Vec<&DischargeRecord>> = BTreeMap::new();
    for r in records {
        strata.entry(stratum_key(r, &spec.strata_keys)).or_default().push(r);
    }
    let populations: Vec<usize> = strata.values().map(Vec::len).collect();
    if spec.sample_size > records.len() {
        return Err(CohortError::Infeasible {
            requested: spec.sample_size,
            available: records.len(),
            strata: strata.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        });
    }
    let quotas = largest_remainder(&populations, spec.sample_size);

    let mut allocation = Vec::with_capacity(strata.len());
    let mut entries = Vec::with_capacity(spec.sample_size);
    for ((key, mut members), quota) in strata.into_iter().zip(quotas) {
        if quota > members.len() {
            return Err(CohortError::Infeasible {
                requested: quota,
                available: members.len(),
                strata: vec![(key, members.len())],
            });
        }
        members.sort_by(|a, b| a.note_id.cmp(&b.note_id));
        let mut rng = SplitMix64::new(spec.seed ^ fnv1a64(key.as_bytes()));
        rng.shuffle(&mut members);
        let mut chosen: Vec<&DischargeRecord> = members[..quota].to_vec();
        chosen.sort_by(|a, b| a.note_id.cmp(&b.note_id));
        allocation.push(StratumAllocation {
            stratum: key.clone(),
            population: members.len(),
            quota,
        });
        entries.extend(chosen.into_iter().map(|r| SampleEntry {
            stratum: key.clone(),
            record: r.clone(),
        }));
    }
    Ok(CohortSample {
        allocation,
        entries,
    })
}

/// SplitMix64; see the module docs for the constants.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n_notes: usize,
    pub n_patients: usize,
    pub age_min: u32,
    pub age_max: u32,
    pub age_mean: f64,
    /// Percentages over unique patients.
    pub gender_pct: BTreeMap<String, f64>,
    /// Over ICU admissions with a recorded ICU length of stay.
    pub mean_icu_los: Option<f64>,
    pub mean_admission_los: f64,
    /// ICU admissions without an ICU length of stay.
    pub icu_los_missing: usize,
}

/// Descriptive statistics of a cohort.
///
/// Age and length-of-stay figures are per admission; gender shares are per
/// unique patient. Sums are taken in `note_id` order, so the result does not
/// depend on the input order.
pub fn cohort_stats(records: &[DischargeRecord]) -> Result<CohortStats, CohortError> {
    if records.is_empty() {
        return Err(CohortError::Empty);
    }
    let mut sorted: Vec<&DischargeRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.note_id.cmp(&b.note_id));

    let n = sorted.len() as f64;
    let age_sum: u64 = sorted.iter().map(|r| u64::from(r.age)).sum();
    let age_min = sorted.iter().map(|r| r.age).min().unwrap_or(0);
    let age_max = sorted.iter().map(|r| r.age).max().unwrap_or(0);

    let mut patients: BTreeMap<&str, Gender> = BTreeMap::new();
    for r in &sorted {
        patients.entry(r.subject_id.as_str()).or_insert(r.gender);
    }
    let mut gender_pct: BTreeMap<String, f64> = [Gender::Male, Gender::Female, Gender::Other]
        .iter()
        .map(|g| (g.as_str().to_string(), 0.0))
        .collect();
    for g in patients.values() {
        *gender_pct.get_mut(g.as_str()).unwrap() += 1.0;
    }
    let n_patients = patients.len();
    for v in gender_pct.values_mut() {
        *v = *v * 100.0 / n_patients as f64;
    }

    let icu_values: Vec<f64> = sorted
        .iter()
        .filter(|r| r.icu_stay)
        .filter_map(|r| r.icu_los)
        .collect();
    let icu_los_missing = sorted
        .iter()
        .filter(|r| r.icu_stay && r.icu_los.is_none())
        .count();
    let mean_icu_los =
        (!icu_values.is_empty()).then(|| icu_values.iter().sum::<f64>() / icu_values.len() as f64);

    Ok(CohortStats {
        n_notes: sorted.len(),
        n_patients,
        age_min,
        age_max,
        age_mean: age_sum as f64 / n,
        gender_pct,
        mean_icu_los,
        mean_admission_los: sorted.iter().map(|r| r.admission_los).sum::<f64>() / n,
        icu_los_missing,
    })
}
