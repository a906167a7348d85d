//! `train`: produce one trained bundle per goal-matching model and one per
//! (policy-matching model, subject).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use mdt_core::agents::{DdqnAgent, DdqnConfig, MetaConfig, MetaRlAgent, ModelId, PfcVariant, RandomAgent};
use mdt_core::agents::Agent as _;
use mdt_core::data::{load_dataset, SubjectDataset};
use mdt_core::env::original_task;
use mdt_core::rng;
use mdt_core::training::{
    train_gm_ddqn, train_gm_meta, train_pm_ddqn, train_pm_meta, train_pm_pfc, FitOptions,
    Regime, TrainedModel, TrainingConfig,
};

use crate::agents_io::{curve_csv, save_bundle};
use crate::layout::{write_text, Layout};
use crate::manifest::{CorpusSource, ExperimentManifest};

pub fn load_corpus(manifest: &ExperimentManifest, layout: &Layout) -> Result<Vec<SubjectDataset>> {
    let dir = match &manifest.corpus {
        CorpusSource::External { path } => path.clone(),
        CorpusSource::Synthetic { .. } => layout.corpus_dir(),
    };
    if !dir.exists() {
        bail!("corpus directory {} not found (run `gen` first)", dir.display());
    }
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no subject files in {}", dir.display());
    }
    files
        .iter()
        .map(|p| load_dataset(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn gm_config(manifest: &ExperimentManifest, epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        regime: Regime::Gm,
        epochs,
        games_min: manifest.training.games_min,
        games_max: manifest.training.games_max,
        pm_k: manifest.training.pm_k,
        pm_n: manifest.training.pm_n,
        early_stop: None,
        seed,
    }
}

fn pm_config(
    manifest: &ExperimentManifest,
    epochs: usize,
    seed: u64,
    early_stop: Option<f64>,
) -> TrainingConfig {
    TrainingConfig {
        regime: Regime::Pm,
        epochs,
        early_stop,
        ..gm_config(manifest, epochs, seed)
    }
}

fn fit_options(manifest: &ExperimentManifest) -> FitOptions {
    FitOptions {
        restarts: manifest.training.fit_restarts,
        max_sweeps: manifest.training.fit_sweeps,
        ..FitOptions::default()
    }
}

fn store(layout: &Layout, model: &str, subject: Option<&str>, bundle: &TrainedModel) -> Result<()> {
    save_bundle(bundle, &layout.bundle_file(model, subject))?;
    write_text(&layout.curve_file(model, subject), &curve_csv(bundle))
}

pub fn run(manifest: &ExperimentManifest, out: &Path, resume: bool) -> Result<()> {
    let layout = Layout::new(out);
    crate::commands::gen::echo_manifest(manifest, &layout)?;
    let corpus = load_corpus(manifest, &layout)?;
    let task = original_task();
    let models: Vec<ModelId> = manifest
        .models
        .iter()
        .map(|m| ModelId::parse(m).expect("validated"))
        .collect();

    // Subject-independent bundles first.
    for model in &models {
        let path = layout.bundle_file(model.as_str(), None);
        if model.is_pm() || (resume && path.exists()) {
            continue;
        }
        let seed = rng::stable_hash(manifest.master_seed, &["train", model.as_str()]);
        let bundle = match model {
            ModelId::Random => {
                let agent = RandomAgent::new();
                TrainedModel {
                    model_id: "random".into(),
                    subject_id: None,
                    checkpoint: agent.checkpoint(),
                    curve: Vec::new(),
                    config: gm_config(manifest, 1, seed),
                    frozen: true,
                }
            }
            ModelId::GmDdqn => {
                let mut agent = DdqnAgent::new(DdqnConfig::default(), seed);
                train_gm_ddqn(
                    &mut agent,
                    &task,
                    &gm_config(manifest, manifest.training.ddqn_epochs, seed),
                )?
            }
            ModelId::GmMetaRl => {
                let mut agent = MetaRlAgent::new(MetaConfig::default(), seed);
                train_gm_meta(
                    &mut agent,
                    &task,
                    &gm_config(manifest, manifest.training.meta_epochs, seed),
                )?
            }
            _ => unreachable!("PM models handled below"),
        };
        store(&layout, model.as_str(), None, &bundle)?;
        println!("train: {} done", model.as_str());
    }

    // Prefrontal fits next: they also provide the DDQN early-stop reference.
    let mut pfc_reference: BTreeMap<String, f64> = if layout.pfc_reference_file().exists() {
        serde_json::from_str(&std::fs::read_to_string(layout.pfc_reference_file())?)?
    } else {
        BTreeMap::new()
    };
    for variant_model in [ModelId::PmPfcRl1, ModelId::PmPfcRl2] {
        if !models.contains(&variant_model) {
            continue;
        }
        let variant = match variant_model {
            ModelId::PmPfcRl1 => PfcVariant::Threshold,
            _ => PfcVariant::Mixture,
        };
        let results: Vec<(String, Option<f64>)> = corpus
            .par_iter()
            .map(|subject| -> Result<(String, Option<f64>)> {
                let sid = subject.subject_id.clone();
                let path = layout.bundle_file(variant_model.as_str(), Some(&sid));
                if resume && path.exists() {
                    return Ok((sid, None));
                }
                let seed =
                    rng::stable_hash(manifest.master_seed, &["train", variant_model.as_str(), &sid]);
                let config = pm_config(manifest, 1, seed, None);
                let (bundle, lik_sum) =
                    train_pm_pfc(variant, subject, &task, &config, &fit_options(manifest))?;
                store(&layout, variant_model.as_str(), Some(&sid), &bundle)?;
                Ok((sid, Some(lik_sum)))
            })
            .collect::<Result<Vec<_>>>()?;
        for (sid, lik) in results {
            if variant_model == ModelId::PmPfcRl1 {
                if let Some(l) = lik {
                    pfc_reference.insert(sid, l);
                }
            }
        }
        println!("train: {} done ({} subjects)", variant_model.as_str(), corpus.len());
    }
    if models.contains(&ModelId::PmPfcRl1) {
        write_text(&layout.pfc_reference_file(), &serde_json::to_string_pretty(&pfc_reference)?)?;
    }

    // Deep policy-matching models per subject.
    for model in [ModelId::PmDdqn, ModelId::PmMetaRl] {
        if !models.contains(&model) {
            continue;
        }
        corpus
            .par_iter()
            .map(|subject| -> Result<()> {
                let sid = subject.subject_id.clone();
                let path = layout.bundle_file(model.as_str(), Some(&sid));
                if resume && path.exists() {
                    return Ok(());
                }
                let seed = rng::stable_hash(manifest.master_seed, &["train", model.as_str(), &sid]);
                let bundle = match model {
                    ModelId::PmDdqn => {
                        let early = if manifest.training.early_stop_from_pfc {
                            pfc_reference.get(&sid).copied()
                        } else {
                            None
                        };
                        let config =
                            pm_config(manifest, manifest.training.ddqn_epochs, seed, early);
                        let mut agent = DdqnAgent::new(DdqnConfig::default(), seed);
                        train_pm_ddqn(&mut agent, subject, &task, &config)?
                    }
                    _ => {
                        let config =
                            pm_config(manifest, manifest.training.meta_epochs, seed, None);
                        let mut agent = MetaRlAgent::new(MetaConfig::default(), seed);
                        train_pm_meta(&mut agent, subject, &task, &config)?
                    }
                };
                store(&layout, model.as_str(), Some(&sid), &bundle)
            })
            .collect::<Result<Vec<_>>>()?;
        println!("train: {} done ({} subjects)", model.as_str(), corpus.len());
    }
    Ok(())
}
