//! Ordinary least squares with an intercept, solved by SVD.

use nalgebra::{DMatrix, DVector};

use crate::error::AnalysisError;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub betas: Vec<f64>,
    pub intercept: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    pub n: usize,
}

/// Fit y = intercept + X b. `x_rows` is the design without the intercept
/// column. Rank deficiency is an error that names the collinear columns
/// (0-based indices into `x_rows`' columns).
pub fn ols_fit(x_rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit, AnalysisError> {
    let n = x_rows.len();
    if n != y.len() {
        return Err(AnalysisError::LengthMismatch(n, y.len()));
    }
    if n == 0 {
        return Err(AnalysisError::NotEnoughData("empty design".into()));
    }
    let k = x_rows[0].len();
    if x_rows.iter().any(|r| r.len() != k) {
        return Err(AnalysisError::NotEnoughData("ragged design matrix".into()));
    }
    let cols = k + 1; // plus intercept
    if n < cols + 1 {
        return Err(AnalysisError::NotEnoughData(format!(
            "{n} rows for {cols} coefficients"
        )));
    }

    let mut data = Vec::with_capacity(n * cols);
    for row in x_rows {
        data.push(1.0);
        data.extend_from_slice(row);
    }
    let x = DMatrix::from_row_slice(n, cols, &data);
    let yv = DVector::from_column_slice(y);

    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = (n.max(cols) as f64) * f64::EPSILON * sigma_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < cols {
        return Err(AnalysisError::RankDeficient(collinear_columns(&x, tol)));
    }
    let beta = svd
        .solve(&yv, tol)
        .map_err(|e| AnalysisError::NotEnoughData(e.to_string()))?;

    let fitted = &x * &beta;
    let residuals: Vec<f64> = (&yv - &fitted).iter().copied().collect();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
    let r_squared = if sst <= 0.0 { 0.0 } else { (1.0 - ssr / sst).clamp(0.0, 1.0) };

    Ok(OlsFit {
        intercept: beta[0],
        betas: beta.iter().skip(1).copied().collect(),
        r_squared,
        residuals,
        n,
    })
}

/// Columns (excluding the intercept) whose removal restores full rank.
fn collinear_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let cols = x.ncols();
    let mut out = Vec::new();
    for j in 1..cols {
        let reduced = x.clone().remove_column(j);
        let svd = reduced.svd(false, false);
        let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
        if rank == cols - 1 {
            out.push(j - 1);
        }
    }
    if out.is_empty() {
        // Degenerate in a way no single column explains; report all.
        out.extend(0..cols - 1);
    }
    out
}
