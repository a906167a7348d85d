//! Pipeline-level checks: resume idempotency, bundle counting, and dataset
//! validation against shipped task specs.

use std::collections::BTreeMap;

use mdt_cli::commands;
use mdt_cli::manifest::{CorpusSource, ExperimentManifest, TaskSource, TrainingSection};
use mdt_core::data::GeneratorFamily;

fn tiny_manifest() -> ExperimentManifest {
    ExperimentManifest {
        version: 1,
        master_seed: 2121,
        corpus: CorpusSource::Synthetic {
            n_subjects: 2,
            family: GeneratorFamily::PfcRl1,
            session_trials: 80,
            priors: BTreeMap::new(),
        },
        models: vec!["random".into(), "PM-pfcRL1".into(), "PM-DDQN".into()],
        tasks: TaskSource::Canonical,
        eval_trials: Some(60),
        recovery_reps: 1,
        training: TrainingSection {
            ddqn_epochs: 3,
            meta_epochs: 3,
            games_min: 15,
            games_max: 20,
            pm_k: 10.0,
            pm_n: 10.0,
            early_stop_from_pfc: true,
            fit_restarts: 1,
            fit_sweeps: 1,
        },
        jobs: 2,
    }
}

#[test]
fn train_is_idempotent_under_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tiny_manifest();
    commands::gen::run(&manifest, tmp.path()).unwrap();
    commands::train::run(&manifest, tmp.path(), false).unwrap();

    // Expected bundle shape: one per non-PM model, one per (PM model,
    // subject).
    assert!(tmp.path().join("models/random/bundle.json").exists());
    for i in 0..2 {
        assert!(tmp
            .path()
            .join(format!("models/PM-pfcRL1/subj_{i:03}/bundle.json"))
            .exists());
        assert!(tmp
            .path()
            .join(format!("models/PM-DDQN/subj_{i:03}/bundle.json"))
            .exists());
    }

    let bundle_path = tmp.path().join("models/PM-pfcRL1/subj_000/bundle.json");
    let before = std::fs::read(&bundle_path).unwrap();
    let mtime_before = std::fs::metadata(&bundle_path).unwrap().modified().unwrap();
    commands::train::run(&manifest, tmp.path(), true).unwrap();
    let after = std::fs::read(&bundle_path).unwrap();
    assert_eq!(before, after);
    let mtime_after = std::fs::metadata(&bundle_path).unwrap().modified().unwrap();
    assert_eq!(mtime_before, mtime_after, "resume must skip the completed bundle");
}

#[test]
fn corpus_validates_against_shipped_task_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tiny_manifest();
    commands::gen::run(&manifest, tmp.path()).unwrap();
    let n = commands::validate::run(
        &tmp.path().join("corpus/subj_000.csv"),
        &tmp.path().join("tasks/T10.json"),
    )
    .unwrap();
    assert_eq!(n, 0, "generated corpus must validate cleanly");
}

#[test]
fn corrupted_dataset_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tiny_manifest();
    commands::gen::run(&manifest, tmp.path()).unwrap();
    let path = tmp.path().join("corpus/subj_000.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    // Swap a stage-2 state for a terminal one on the first data row.
    let corrupted: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("subj_000,0,") {
                let mut fields: Vec<&str> = l.split(',').collect();
                fields[6] = fields[8]; // s2 := s3
                fields.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(&path, corrupted.join("\n")).unwrap();
    let n = commands::validate::run(&path, &tmp.path().join("tasks/T10.json")).unwrap();
    assert!(n > 0, "corruption must be reported");
}
