//! Loads the 200-note synthetic cohort, prints its demographics and draws a
//! stratified sample by discharge location and ICU stay.

use discharge_audit::cohort::{
    cohort_stats, filter_eligible, load_records, stratified_sample, CohortSpec, IngestionConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/cohort");
    let records = load_records(
        format!("{dir}/notes.csv"),
        format!("{dir}/admissions.csv"),
        &IngestionConfig::default(),
    )?;
    let stats = cohort_stats(&records)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);

    let spec = CohortSpec::new(40, 2024);
    let eligible = filter_eligible(&records, &spec);
    let sample = stratified_sample(&eligible, &spec)?;
    println!("\n{} eligible notes, sampling {}", eligible.len(), spec.sample_size);
    println!("{:<48} {:>10} {:>6}", "stratum", "population", "quota");
    for a in &sample.allocation {
        println!("{:<48} {:>10} {:>6}", a.stratum, a.population, a.quota);
    }
    println!("\nfirst notes drawn: {:?}", &sample.note_ids()[..5]);
    Ok(())
}
