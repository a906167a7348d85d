//! `battery`: frozen evaluation of every (subject, model, task) cell with
//! task-variable sequences fixed per task across models, the original-task
//! recovery simulations, and the analysis reports.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use mdt_core::agents::{FreezeMode, ModelId};
use mdt_core::analysis::{
    choice_consistency, choice_optimality, encoding_efficacy, episode_mi, glm_profile_with,
    ideal_oracle, normalized_reward, paired_ttest, recovery_test, GlmProfile, IdealOracle,
    OptimalityStage, ProfileSource, TrialFilter,
};
use mdt_core::data::{load_dataset, validate_against_task, SubjectDataset};
use mdt_core::env::TaskSpec;
use mdt_core::rng;
use mdt_core::training::freeze_and_evaluate;

use crate::agents_io::{instantiate, load_bundle};
use crate::layout::{opt_cell, write_text, Layout};
use crate::manifest::ExperimentManifest;

pub struct BatteryTasks {
    pub specs: Vec<TaskSpec>,
}

/// Tasks with the battery env seed (shared by every model and subject) and
/// the eval trial count applied.
pub fn battery_tasks(manifest: &ExperimentManifest) -> Result<BatteryTasks> {
    let mut specs = manifest.task_specs()?;
    for spec in &mut specs {
        let seed = rng::stable_hash(manifest.master_seed, &["battery-env", &spec.name]);
        *spec = spec.with_env_seed(seed);
        if let Some(n) = manifest.eval_trials {
            *spec = spec.with_trials(n);
        }
    }
    Ok(BatteryTasks { specs })
}

fn eval_cell(
    manifest: &ExperimentManifest,
    layout: &Layout,
    spec: &TaskSpec,
    model: ModelId,
    subject_id: &str,
    resume: bool,
) -> Result<()> {
    let path = layout.eval_file(&spec.name, model.as_str(), subject_id);
    if resume && path.exists() {
        return Ok(());
    }
    let bundle_subject = if model.is_pm() { Some(subject_id) } else { None };
    let bundle = load_bundle(&layout.bundle_file(model.as_str(), bundle_subject))
        .with_context(|| format!("bundle for {} / {subject_id}", model.as_str()))?;
    let mut agent = instantiate(&bundle)?;
    let act_seed = rng::stable_hash(
        manifest.master_seed,
        &["battery-act", subject_id, model.as_str(), &spec.name],
    );
    agent.reseed(act_seed);
    let (ds, _) = freeze_and_evaluate(
        agent.as_mut(),
        spec,
        spec.n_trials,
        FreezeMode::WeightsOnly,
        act_seed,
        subject_id,
        model.as_str(),
    )?;
    crate::layout::write_text(&path, &ds.to_csv())
}

fn recovery_sim_cell(
    manifest: &ExperimentManifest,
    layout: &Layout,
    subject: &SubjectDataset,
    model: ModelId,
    rep: usize,
    resume: bool,
) -> Result<()> {
    let path = layout.recovery_sim_file(model.as_str(), &subject.subject_id, rep);
    if resume && path.exists() {
        return Ok(());
    }
    let bundle_subject = if model.is_pm() { Some(subject.subject_id.as_str()) } else { None };
    let bundle = load_bundle(&layout.bundle_file(model.as_str(), bundle_subject))?;
    let mut agent = instantiate(&bundle)?;
    // The simulation replays the subject's task-variable sequence: original
    // task, the subject's env seed, the subject's session length.
    let spec = original_spec_for(subject);
    let act_seed = rng::stable_hash(
        manifest.master_seed,
        &["recovery-act", &subject.subject_id, model.as_str(), &rep.to_string()],
    );
    agent.reseed(act_seed);
    let (ds, _) = freeze_and_evaluate(
        agent.as_mut(),
        &spec,
        subject.records.len(),
        FreezeMode::WeightsOnly,
        act_seed,
        &subject.subject_id,
        model.as_str(),
    )?;
    crate::layout::write_text(&path, &ds.to_csv())
}

fn original_spec_for(subject: &SubjectDataset) -> TaskSpec {
    mdt_core::env::original_task()
        .with_env_seed(subject.task.env_seed)
        .with_trials(subject.records.len())
}

pub fn run(
    manifest: &ExperimentManifest,
    out: &Path,
    resume: bool,
    optimality_stage: OptimalityStage,
) -> Result<()> {
    let layout = Layout::new(out);
    crate::commands::gen::echo_manifest(manifest, &layout)?;
    let corpus = crate::commands::train::load_corpus(manifest, &layout)?;
    let models: Vec<ModelId> =
        manifest.models.iter().map(|m| ModelId::parse(m).expect("validated")).collect();
    let tasks = battery_tasks(manifest)?;

    // Every dataset entering the battery must validate against its task.
    for subject in &corpus {
        let report = validate_against_task(subject, &original_spec_for(subject));
        if !report.is_clean() {
            bail!(
                "corpus subject {} fails validation: {} violations (first: {:?})",
                subject.subject_id,
                report.violations.len(),
                report.violations.first()
            );
        }
    }

    // Phase 1: frozen evaluations, embarrassingly parallel over cells.
    let mut cells = Vec::new();
    for spec in &tasks.specs {
        for model in &models {
            for subject in &corpus {
                cells.push((spec.clone(), *model, subject.subject_id.clone()));
            }
        }
    }
    cells
        .par_iter()
        .map(|(spec, model, sid)| eval_cell(manifest, &layout, spec, *model, sid, resume))
        .collect::<Result<Vec<_>>>()?;
    println!("battery: {} evaluation cells complete", cells.len());

    // Phase 2: recovery simulations on the original task.
    let mut sim_cells = Vec::new();
    for model in &models {
        for subject in &corpus {
            for rep in 0..manifest.recovery_reps {
                sim_cells.push((*model, subject, rep));
            }
        }
    }
    sim_cells
        .par_iter()
        .map(|(model, subject, rep)| {
            recovery_sim_cell(manifest, &layout, subject, *model, *rep, resume)
        })
        .collect::<Result<Vec<_>>>()?;
    println!("battery: {} recovery simulations complete", sim_cells.len());

    // Phase 3: single-threaded analysis pass in deterministic order.
    write_reports(manifest, &layout, &corpus, &models, &tasks, optimality_stage)
}

struct CellMetrics {
    task: String,
    model: String,
    subject: String,
    n_trials: usize,
    normalized: Option<f64>,
    normalized_changed: Option<f64>,
    optimality: f64,
    consistency: Option<f64>,
    i_fa: f64,
    i_aa: f64,
}

fn write_reports(
    manifest: &ExperimentManifest,
    layout: &Layout,
    corpus: &[SubjectDataset],
    models: &[ModelId],
    tasks: &BatteryTasks,
    optimality_stage: OptimalityStage,
) -> Result<()> {
    // Oracles replay per task once.
    let mut oracles: BTreeMap<String, IdealOracle> = BTreeMap::new();
    for spec in &tasks.specs {
        oracles.insert(spec.name.clone(), ideal_oracle(spec)?);
    }

    let mut metrics: Vec<CellMetrics> = Vec::new();
    for spec in &tasks.specs {
        let oracle = &oracles[&spec.name];
        for model in models {
            for subject in corpus {
                let path = layout.eval_file(&spec.name, model.as_str(), &subject.subject_id);
                let ds = load_dataset(&path)
                    .with_context(|| format!("loading eval {}", path.display()))?;
                let (_, optimality) = choice_optimality(&ds, oracle);
                let mi = episode_mi(&ds, oracle)?;
                metrics.push(CellMetrics {
                    task: spec.name.clone(),
                    model: model.as_str().to_string(),
                    subject: subject.subject_id.clone(),
                    n_trials: ds.records.len(),
                    normalized: normalized_reward(&ds, oracle, TrialFilter::All),
                    normalized_changed: normalized_reward(&ds, oracle, TrialFilter::ActionChanged),
                    optimality,
                    consistency: choice_consistency(&ds),
                    i_fa: mi.i_fa,
                    i_aa: mi.i_aa,
                });
            }
        }
    }

    // behavior_metrics.csv
    let mut out = String::from(
        "task,model,subject,n_trials,normalized_reward,normalized_reward_action_changed,choice_optimality,choice_consistency\n",
    );
    for m in &metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.task,
            m.model,
            m.subject,
            m.n_trials,
            opt_cell(m.normalized),
            opt_cell(m.normalized_changed),
            m.optimality,
            opt_cell(m.consistency),
        ));
    }
    write_text(&layout.report_file("behavior_metrics.csv"), &out)?;

    // mi_reports.csv
    let mut out = String::from("task,model,subject,i_fa_bits,i_aa_bits,n_trials\n");
    for m in &metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.task,
            m.model,
            m.subject,
            m.i_fa,
            m.i_aa,
            m.n_trials.saturating_sub(1),
        ));
    }
    write_text(&layout.report_file("mi_reports.csv"), &out)?;

    // efficacy.csv: across subjects per (task, model).
    let mut out =
        String::from("task,model,n_valid,n_excluded,ratio_mean,slope,intercept,r_squared,p\n");
    for spec in &tasks.specs {
        for model in models {
            let points: Vec<(f64, f64)> = metrics
                .iter()
                .filter(|m| m.task == spec.name && m.model == model.as_str())
                .map(|m| (m.i_fa, m.i_aa))
                .collect();
            let report = encoding_efficacy(&points);
            let (slope, intercept, r2, p) = match report.regression {
                Some(r) => (Some(r.slope), Some(r.intercept), Some(r.r_squared), Some(r.p)),
                None => (None, None, None, None),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                spec.name,
                model.as_str(),
                report.n_valid,
                report.n_excluded,
                opt_cell(report.ratio_mean),
                opt_cell(slope),
                opt_cell(intercept),
                opt_cell(r2),
                opt_cell(p),
            ));
        }
    }
    write_text(&layout.report_file("efficacy.csv"), &out)?;

    // ttests.csv: each model against the random agent, paired over subjects
    // on mean normalized reward per task. FAIL when the model does not
    // significantly outperform.
    let mut out = String::from("task,model,t,df,p,mean_diff,undefined,fail\n");
    if models.contains(&ModelId::Random) {
        for spec in &tasks.specs {
            let random_scores: Vec<f64> = corpus
                .iter()
                .map(|s| {
                    metrics
                        .iter()
                        .find(|m| {
                            m.task == spec.name
                                && m.model == ModelId::Random.as_str()
                                && m.subject == s.subject_id
                        })
                        .and_then(|m| m.normalized)
                        .unwrap_or(0.0)
                })
                .collect();
            for model in models {
                let scores: Vec<f64> = corpus
                    .iter()
                    .map(|s| {
                        metrics
                            .iter()
                            .find(|m| {
                                m.task == spec.name
                                    && m.model == model.as_str()
                                    && m.subject == s.subject_id
                            })
                            .and_then(|m| m.normalized)
                            .unwrap_or(0.0)
                    })
                    .collect();
                let test = paired_ttest(&scores, &random_scores)?;
                let (t, df, p, mean_diff, undefined) = match test {
                    Some(t) => (Some(t.t), Some(t.df as f64), Some(t.p), Some(t.mean_diff), false),
                    None => (None, None, None, None, true),
                };
                let fail = match test {
                    Some(t) => !(t.mean_diff > 0.0 && t.p <= 0.05),
                    None => true,
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    spec.name,
                    model.as_str(),
                    opt_cell(t),
                    opt_cell(df),
                    opt_cell(p),
                    opt_cell(mean_diff),
                    undefined,
                    fail,
                ));
            }
        }
    }
    write_text(&layout.report_file("ttests.csv"), &out)?;

    // Recovery: human profiles paired with rep-averaged model profiles on
    // the original task.
    let mut profile_rows = String::from(
        "source,model,subject,beta_uncertainty,beta_goal,beta_prev_action,beta_prev_state,intercept,r_squared,n,degenerate,mean_optimality\n",
    );
    let mut human_profiles: Vec<GlmProfile> = Vec::new();
    for subject in corpus {
        let spec = original_spec_for(subject);
        let oracle = ideal_oracle(&spec)?;
        let profile =
            glm_profile_with(subject, &oracle, ProfileSource::Human, None, optimality_stage)?;
        profile_rows.push_str(&profile_csv_row(&profile, "human", "-"));
        human_profiles.push(profile);
    }
    let mut recovery_out = String::from("model,regressor,r,p,slope,n,r2_uncertainty,r2_goal\n");
    for model in models {
        let mut model_profiles = Vec::new();
        for subject in corpus {
            let spec = original_spec_for(subject);
            let oracle = ideal_oracle(&spec)?;
            let mut acc = [0.0f64; 4];
            let mut acc_n = [0usize; 4];
            let mut last: Option<GlmProfile> = None;
            for rep in 0..manifest.recovery_reps {
                let path = layout.recovery_sim_file(model.as_str(), &subject.subject_id, rep);
                let sim = load_dataset(&path)?;
                let p = glm_profile_with(
                    &sim,
                    &oracle,
                    ProfileSource::Model,
                    Some(model.as_str().to_string()),
                    optimality_stage,
                )?;
                for k in 0..4 {
                    if let Some(b) = p.betas[k] {
                        acc[k] += b;
                        acc_n[k] += 1;
                    }
                }
                last = Some(p);
            }
            let mut averaged = last.expect("recovery_reps >= 1");
            for k in 0..4 {
                averaged.betas[k] =
                    if acc_n[k] > 0 { Some(acc[k] / acc_n[k] as f64) } else { None };
            }
            profile_rows.push_str(&profile_csv_row(&averaged, "model", model.as_str()));
            model_profiles.push(averaged);
        }
        let report = recovery_test(&human_profiles, &model_profiles)?;
        for (k, name) in mdt_core::analysis::REGRESSOR_NAMES.iter().enumerate() {
            let (r, p, slope, n) = match &report.per_regressor[k] {
                Some(s) => (Some(s.r), Some(s.p), Some(s.slope), s.n),
                None => (None, None, None, 0),
            };
            recovery_out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                model.as_str(),
                name,
                opt_cell(r),
                opt_cell(p),
                opt_cell(slope),
                n,
                opt_cell(report.r2_uncertainty),
                opt_cell(report.r2_goal),
            ));
        }
    }
    write_text(&layout.report_file("glm_profiles.csv"), &profile_rows)?;
    write_text(&layout.report_file("recovery.csv"), &recovery_out)?;
    println!("battery: reports written to {}", layout.reports_dir().display());
    Ok(())
}

fn profile_csv_row(p: &GlmProfile, source: &str, model: &str) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        source,
        model,
        p.subject_id,
        opt_cell(p.betas[0]),
        opt_cell(p.betas[1]),
        opt_cell(p.betas[2]),
        opt_cell(p.betas[3]),
        opt_cell(p.intercept),
        opt_cell(p.r_squared),
        p.n,
        p.degenerate,
        p.mean_optimality,
    )
}
