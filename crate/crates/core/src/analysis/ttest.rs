//! Paired t-test with the two-sided p computed from the regularized
//! incomplete beta.

use serde::{Deserialize, Serialize};

use crate::analysis::special::student_t_two_sided_p;
use crate::error::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_diff: f64,
}

/// Classic paired t statistic over per-seed (or per-subject) score pairs.
/// Returns Ok(None) when the differences have zero variance (the statistic
/// is undefined there, including the a == b case).
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<Option<PairedTTest>, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(AnalysisError::NotEnoughData("paired t-test needs n >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 {
        return Ok(None);
    }
    let t = mean / (var / nf).sqrt();
    let df = n - 1;
    let p = student_t_two_sided_p(t, df as f64);
    Ok(Some(PairedTTest { t, df, p, mean_diff: mean }))
}
