//! `validate`: check a behavioral dataset file against a task spec.

use std::path::Path;

use anyhow::{Context, Result};

use mdt_core::data::{load_dataset, validate_against_task};
use mdt_core::env::TaskSpec;

/// Returns the number of violations found (0 means clean).
pub fn run(data_path: &Path, task_path: &Path) -> Result<usize> {
    let ds = load_dataset(data_path)
        .with_context(|| format!("loading dataset {}", data_path.display()))?;
    let text = std::fs::read_to_string(task_path)
        .with_context(|| format!("reading task spec {}", task_path.display()))?;
    let spec = TaskSpec::from_json(&text)
        .with_context(|| format!("parsing task spec {}", task_path.display()))?;
    let report = validate_against_task(&ds, &spec);
    if report.is_clean() {
        println!(
            "validate: {} ({} trials) is consistent with task {}",
            ds.subject_id,
            ds.records.len(),
            spec.name
        );
    } else {
        for v in &report.violations {
            println!("row {}: {}: {}", v.row, v.kind, v.message);
        }
        println!("validate: {} violations", report.violations.len());
    }
    Ok(report.violations.len())
}
