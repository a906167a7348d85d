//! Latent behavior profiling: the per-trial ideal-agent oracle, the GLM of
//! choice optimality on task variables, and the across-subject recovery
//! test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::ols::ols_fit;
use crate::analysis::special::pearson;
use crate::data::SubjectDataset;
use crate::env::{ideal_action_at, Action, Env, GoalCondition, Stage, StateId, TaskSpec, Uncertainty};
use crate::error::{AnalysisError, EnvError};

/// Everything the analyses need to know about the ideal agent on one trial.
#[derive(Debug, Clone)]
pub struct IdealTrial {
    pub goal: GoalCondition,
    pub p: f64,
    pub uncertainty: Uncertainty,
    pub block: u32,
    pub ideal_a1: Action,
    pub a1_tie: bool,
    pub root_value: f64,
    /// Ideal stage-2 action (and tie flag) per stage-2 state.
    pub ideal_a2: BTreeMap<StateId, (Action, bool)>,
}

#[derive(Debug, Clone)]
pub struct IdealOracle {
    pub task_name: String,
    pub trials: Vec<IdealTrial>,
}

/// Replay the environment schedule (a pure function of spec + seed) and
/// compute the ideal agent's actions for every trial.
pub fn ideal_oracle(spec: &TaskSpec) -> Result<IdealOracle, EnvError> {
    let env = Env::new(spec)?;
    let graph = env.graph();
    let schedule = env.schedule();
    let stage2 = graph.states_of_stage(Stage::Two);
    let mut trials = Vec::with_capacity(spec.n_trials);
    for t in 0..spec.n_trials {
        let goal = schedule.goals[t];
        let p = schedule.p[t];
        let (a1, q1) = ideal_action_at(graph, p, goal, graph.root());
        let mut ideal_a2 = BTreeMap::new();
        for &s2 in &stage2 {
            let (a2, q2) = ideal_action_at(graph, p, goal, s2);
            ideal_a2.insert(s2, (a2, (q2[0] - q2[1]).abs() < 1e-12));
        }
        trials.push(IdealTrial {
            goal,
            p,
            uncertainty: schedule.labels[t],
            block: schedule.blocks[t],
            ideal_a1: a1,
            a1_tie: (q1[0] - q1[1]).abs() < 1e-12,
            root_value: q1[0].max(q1[1]),
            ideal_a2,
        });
    }
    Ok(IdealOracle { task_name: spec.name.clone(), trials })
}

pub const REGRESSOR_NAMES: [&str; 4] = ["uncertainty", "goal", "prev_action", "prev_state"];

/// Which stage's agreement with the ideal agent serves as the dependent
/// variable. Stage 1 is the default convention; stage 2 avoids the exact
/// value ties that make stage-1 agreement uninformative on 0.5-probability
/// trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalityStage {
    Stage1,
    Stage2,
    /// Mean agreement over the trial's two choices (0, 0.5, or 1).
    BothStages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Human,
    Model,
}

/// Fitted latent behavior profile of one subject (or one model run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmProfile {
    pub subject_id: String,
    pub source: ProfileSource,
    pub model_id: Option<String>,
    /// One coefficient per `REGRESSOR_NAMES` entry; None marks a regressor
    /// dropped for zero variance (or a fully degenerate fit).
    pub betas: [Option<f64>; 4],
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub n: usize,
    pub degenerate: bool,
    pub mean_optimality: f64,
}

/// Regress choice optimality on {uncertainty, goal, previous action,
/// previous stage-2 state}. The first trial is dropped (lagged regressors);
/// zero-variance columns are dropped and marked undefined.
pub fn glm_profile(
    ds: &SubjectDataset,
    oracle: &IdealOracle,
    source: ProfileSource,
    model_id: Option<String>,
) -> Result<GlmProfile, AnalysisError> {
    glm_profile_with(ds, oracle, source, model_id, OptimalityStage::Stage1)
}

/// `glm_profile` with an explicit choice-optimality convention.
pub fn glm_profile_with(
    ds: &SubjectDataset,
    oracle: &IdealOracle,
    source: ProfileSource,
    model_id: Option<String>,
    stage: OptimalityStage,
) -> Result<GlmProfile, AnalysisError> {
    let n = ds.records.len().min(oracle.trials.len());
    if n < 10 {
        return Err(AnalysisError::NotEnoughData(format!("{n} trials for a lagged GLM")));
    }
    let mut y = Vec::with_capacity(n - 1);
    let mut cols: [Vec<f64>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for t in 1..n {
        let rec = &ds.records[t];
        let prev = &ds.records[t - 1];
        let ideal = &oracle.trials[t];
        let agree1 = rec.a1 == ideal.ideal_a1;
        let agree2 = ideal.ideal_a2.get(&rec.s2).map(|(a, _)| *a) == Some(rec.a2);
        y.push(match stage {
            OptimalityStage::Stage1 => f64::from(agree1),
            OptimalityStage::Stage2 => f64::from(agree2),
            OptimalityStage::BothStages => (f64::from(agree1) + f64::from(agree2)) / 2.0,
        });
        cols[0].push(match rec.uncertainty {
            Uncertainty::Low => 0.0,
            Uncertainty::High => 1.0,
        });
        cols[1].push(if rec.goal.is_specific() { 1.0 } else { 0.0 });
        cols[2].push(match prev.a1 {
            Action::Left => 0.0,
            Action::Right => 1.0,
        });
        cols[3].push(prev.s2.index() as f64);
    }
    // Standardize the previous-state index.
    standardize(&mut cols[3]);

    let mean_y = y.iter().sum::<f64>() / y.len() as f64;
    let y_var = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>();
    if y_var <= 0.0 {
        return Ok(GlmProfile {
            subject_id: ds.subject_id.clone(),
            source,
            model_id,
            betas: [None; 4],
            intercept: None,
            r_squared: None,
            n: y.len(),
            degenerate: true,
            mean_optimality: mean_y,
        });
    }

    let keep: Vec<usize> = (0..4).filter(|&k| column_varies(&cols[k])).collect();
    let rows: Vec<Vec<f64>> = (0..y.len())
        .map(|i| keep.iter().map(|&k| cols[k][i]).collect())
        .collect();
    let fit = ols_fit(&rows, &y)?;
    let mut betas = [None; 4];
    for (slot, &k) in keep.iter().enumerate() {
        betas[k] = Some(fit.betas[slot]);
    }
    Ok(GlmProfile {
        subject_id: ds.subject_id.clone(),
        source,
        model_id,
        betas,
        intercept: Some(fit.intercept),
        r_squared: Some(fit.r_squared),
        n: y.len(),
        degenerate: keep.len() < 4,
        mean_optimality: mean_y,
    })
}

fn column_varies(col: &[f64]) -> bool {
    col.windows(2).any(|w| w[0] != w[1])
}

fn standardize(col: &mut [f64]) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        let sd = var.sqrt();
        for v in col.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorRecovery {
    pub r: f64,
    pub p: f64,
    pub slope: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Per-regressor across-subject recovery, aligned with REGRESSOR_NAMES.
    pub per_regressor: [Option<RegressorRecovery>; 4],
    /// Squared recovery correlation for the uncertainty effect.
    pub r2_uncertainty: Option<f64>,
    /// Squared recovery correlation for the goal effect.
    pub r2_goal: Option<f64>,
}

/// Across-subject recovery: correlate human and model profile coefficients,
/// pairwise by subject, one test per regressor.
pub fn recovery_test(
    human: &[GlmProfile],
    model: &[GlmProfile],
) -> Result<RecoveryReport, AnalysisError> {
    if human.len() != model.len() {
        return Err(AnalysisError::LengthMismatch(human.len(), model.len()));
    }
    let mut per_regressor = [None; 4];
    for k in 0..4 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (h, m) in human.iter().zip(model) {
            if let (Some(hb), Some(mb)) = (h.betas[k], m.betas[k]) {
                xs.push(hb);
                ys.push(mb);
            }
        }
        if let Some((r, p)) = pearson(&xs, &ys)? {
            let slope = regression_slope(&xs, &ys);
            per_regressor[k] = Some(RegressorRecovery { r, p, slope, n: xs.len() });
        }
    }
    Ok(RecoveryReport {
        r2_uncertainty: per_regressor[0].map(|s| s.r * s.r),
        r2_goal: per_regressor[1].map(|s| s.r * s.r),
        per_regressor,
    })
}

fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}
