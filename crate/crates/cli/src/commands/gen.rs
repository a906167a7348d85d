//! `gen`: write the synthetic corpus, ground truth, the task suite, and the
//! manifest echo.

use std::path::Path;

use anyhow::{bail, Context, Result};

use mdt_core::data::{generate_subjects, save_dataset, SubjectGeneratorConfig};
use mdt_core::rng;

use crate::layout::{write_text, Layout};
use crate::manifest::{CorpusSource, ExperimentManifest};

pub fn run(manifest: &ExperimentManifest, out: &Path) -> Result<()> {
    let layout = Layout::new(out);
    echo_manifest(manifest, &layout)?;

    // Task suite files.
    let specs = manifest.task_specs()?;
    for spec in &specs {
        write_text(&layout.task_file(&spec.name), &spec.to_json())?;
    }
    println!("gen: wrote {} task specs", specs.len());

    match &manifest.corpus {
        CorpusSource::External { path } => {
            if !path.exists() {
                bail!("external corpus path {} does not exist", path.display());
            }
            println!("gen: external corpus at {}, nothing to generate", path.display());
        }
        CorpusSource::Synthetic { n_subjects, family, session_trials, priors } => {
            let mut cfg = SubjectGeneratorConfig::new(*family, manifest.master_seed);
            cfg.n_subjects = *n_subjects;
            cfg.session_trials = *session_trials;
            for (k, v) in priors {
                cfg.priors.insert(k.clone(), *v);
            }
            let corpus = generate_subjects(&cfg).context("generating synthetic corpus")?;
            std::fs::create_dir_all(layout.corpus_dir())?;
            let mut truths = Vec::new();
            for (ds, truth) in &corpus {
                save_dataset(ds, &layout.subject_file(&ds.subject_id))
                    .with_context(|| format!("writing subject {}", ds.subject_id))?;
                truths.push(truth.clone());
            }
            write_text(&layout.ground_truth(), &serde_json::to_string_pretty(&truths)?)?;
            write_text(&layout.corpus_manifest(), &serde_json::to_string_pretty(&cfg)?)?;
            println!("gen: wrote {} subject files", corpus.len());
        }
    }
    Ok(())
}

pub fn echo_manifest(manifest: &ExperimentManifest, layout: &Layout) -> Result<()> {
    // The run order over tasks is a seeded permutation, recorded here.
    let specs = manifest.task_specs()?;
    let mut order: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let mut r = rng::stream(manifest.master_seed, &["task-order"]);
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    let echo = serde_json::json!({
        "manifest": serde_json::from_str::<serde_json::Value>(&manifest.to_json())?,
        "task_order": order,
    });
    write_text(&layout.manifest_echo(), &serde_json::to_string_pretty(&echo)?)
}
