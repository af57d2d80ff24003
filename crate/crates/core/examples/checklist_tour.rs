//! Loads the bundled checklist, prints its components and batch layout, and
//! shows how validation rejects a broken edit.

use discharge_audit::checklist::AuditChecklist;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let checklist = AuditChecklist::discharged();
    checklist.validate()?;
    println!("{checklist}");

    for component in &checklist.components {
        let questions: Vec<_> = checklist.questions.iter().filter(|q| q.component == component.code).collect();
        println!("\n{} {} ({} questions)", component.code, component.title, questions.len());
        for q in questions {
            println!("  [{}] batch {}: {}", q.id, q.batch_id, q.text);
        }
    }

    println!();
    for batch in checklist.batch_partition() {
        let ids: Vec<&str> = batch.questions.iter().map(|q| q.id.as_str()).collect();
        println!("batch {}: {}", batch.batch_id, ids.join(", "));
    }

    let mut broken = checklist.clone();
    broken.questions.pop();
    match broken.validate() {
        Ok(()) => println!("\nunexpectedly valid"),
        Err(e) => println!("\nremoving a question is rejected: {e}"),
    }
    Ok(())
}
