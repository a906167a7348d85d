//! Plug-in mutual information over discrete sequences, the episode variable
//! built from the previous trial, and the encoding-efficacy regression.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::glm::IdealOracle;
use crate::analysis::special::pearson;
use crate::data::SubjectDataset;
use crate::error::AnalysisError;

/// Plug-in (maximum likelihood) mutual information in bits, with the
/// optional Miller-Madow bias correction.
pub fn plugin_mi(xs: &[u32], ys: &[u32], miller_madow: bool) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(AnalysisError::NotEnoughData("empty sequences".into()));
    }
    let n = xs.len() as f64;
    let mut joint: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut px: BTreeMap<u32, f64> = BTreeMap::new();
    let mut py: BTreeMap<u32, f64> = BTreeMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *px.entry(x).or_insert(0.0) += 1.0;
        *py.entry(y).or_insert(0.0) += 1.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c / n;
        let p_x = px[&x] / n;
        let p_y = py[&y] / n;
        mi += pxy * (pxy / (p_x * p_y)).log2();
    }
    if miller_madow {
        mi += (joint.len() as f64 - px.len() as f64 - py.len() as f64 + 1.0) / (2.0 * n * std::f64::consts::LN_2);
    }
    // Clamp tiny negative rounding residue.
    Ok(if mi < 0.0 && mi > -1e-12 { 0.0 } else { mi })
}

/// Empirical Shannon entropy of a discrete sequence, in bits.
pub fn empirical_entropy(xs: &[u32]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for &x in xs {
        *counts.entry(x).or_insert(0.0) += 1.0;
    }
    -counts.values().map(|c| (c / n) * (c / n).log2()).sum::<f64>()
}

/// Mutual-information pair for one (subject, task, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    /// I(previous-episode variable; current stage-1 action), bits.
    pub i_fa: f64,
    /// I(current stage-1 action; ideal stage-1 action), bits.
    pub i_aa: f64,
    pub n_trials: usize,
}

/// The episode variable of the previous trial: (stage-2 action, terminal
/// state, ideal stage-2 action at the visited state, reward), combined into
/// one exact product-alphabet symbol.
pub fn episode_symbol(
    a2: crate::env::Action,
    s3: crate::env::StateId,
    a2_star: crate::env::Action,
    reward: u32,
) -> u32 {
    let r_idx = match reward {
        0 => 0,
        10 => 1,
        20 => 2,
        _ => 3,
    };
    ((a2.index() as u32 * crate::env::MAX_STATES as u32 + s3.0 as u32) * 2
        + a2_star.index() as u32)
        * 4
        + r_idx
}

/// Build (F_{t-1}, a_t) pairs (first trial dropped) and compute both
/// information quantities on that trial subset.
pub fn episode_mi(ds: &SubjectDataset, oracle: &IdealOracle) -> Result<MiReport, AnalysisError> {
    let n = ds.records.len().min(oracle.trials.len());
    if n < 2 {
        return Err(AnalysisError::NotEnoughData("need at least 2 trials".into()));
    }
    let mut f_prev = Vec::with_capacity(n - 1);
    let mut actions = Vec::with_capacity(n - 1);
    let mut ideal_actions = Vec::with_capacity(n - 1);
    for t in 1..n {
        let prev = &ds.records[t - 1];
        let prev_oracle = &oracle.trials[t - 1];
        let a2_star = prev_oracle
            .ideal_a2
            .get(&prev.s2)
            .map(|(a, _)| *a)
            .unwrap_or(crate::env::Action::Left);
        f_prev.push(episode_symbol(prev.a2, prev.s3, a2_star, prev.reward));
        actions.push(ds.records[t].a1.index() as u32);
        ideal_actions.push(oracle.trials[t].ideal_a1.index() as u32);
    }
    Ok(MiReport {
        i_fa: plugin_mi(&f_prev, &actions, false)?,
        i_aa: plugin_mi(&actions, &ideal_actions, false)?,
        n_trials: n - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficacyRegression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub p: f64,
}

/// Across-subject efficacy summary for one (task, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    pub n_valid: usize,
    /// Points dropped because i_aa = 0 made the ratio undefined.
    pub n_excluded: usize,
    pub ratio_mean: Option<f64>,
    pub regression: Option<EfficacyRegression>,
}

/// Regress choice-optimality information on episodic-encoding information
/// across subjects, and summarize the per-subject ratio i_fa / i_aa.
pub fn encoding_efficacy(points: &[(f64, f64)]) -> EfficacyReport {
    let mut ratios = Vec::new();
    let mut n_excluded = 0usize;
    for &(i_fa, i_aa) in points {
        if i_aa > 0.0 {
            ratios.push(i_fa / i_aa);
        } else {
            n_excluded += 1;
        }
    }
    let ratio_mean = if ratios.is_empty() {
        None
    } else {
        Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
    };

    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let regression = if points.len() < 3 {
        None
    } else {
        match pearson(&xs, &ys) {
            Ok(Some((r, p))) => {
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let sxx: f64 = xs.iter().map(|v| (v - mx) * (v - mx)).sum();
                let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
                let slope = sxy / sxx;
                Some(EfficacyRegression {
                    slope,
                    intercept: my - slope * mx,
                    r_squared: r * r,
                    p,
                })
            }
            _ => None,
        }
    };
    EfficacyReport { n_valid: points.len() - n_excluded, n_excluded, ratio_mean, regression }
}
