//! Ordinary least squares via normal equations, with a ridge fallback on
//! rank deficiency.

use super::BenchmarkError;

/// Fitted linear model: `coefficients[0]` is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsModel {
    pub coefficients: Vec<f64>,
    /// True when the normal equations were rank deficient and a ridge term
    /// (1e-8 on the diagonal) was used.
    pub ridge_fallback: bool,
}

pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Least-squares fit of `(feature vector, target)` pairs with an intercept.
/// Needs at least `k + 1` rows for `k` features. Falls back to ridge on rank
/// deficiency.
pub fn ols_fit(pairs: &[(&[f64], f64)]) -> Result<OlsModel, BenchmarkError> {
    fit_impl(pairs, true)
}

/// Like [`ols_fit`] but fails with `SingularDesign` instead of falling back.
pub fn ols_fit_strict(pairs: &[(&[f64], f64)]) -> Result<OlsModel, BenchmarkError> {
    fit_impl(pairs, false)
}

fn fit_impl(pairs: &[(&[f64], f64)], allow_ridge: bool) -> Result<OlsModel, BenchmarkError> {
    let k = pairs
        .first()
        .map(|(x, _)| x.len())
        .ok_or(BenchmarkError::InsufficientRows { rows: 0, required: 1 })?;
    let p = k + 1;
    if pairs.len() < p {
        return Err(BenchmarkError::InsufficientRows {
            rows: pairs.len(),
            required: p,
        });
    }
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for (x, y) in pairs {
        debug_assert_eq!(x.len(), k);
        row[0] = 1.0;
        row[1..].copy_from_slice(x);
        for i in 0..p {
            for j in i..p {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * y;
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
    }

    if let Some(beta) = cholesky_solve(&xtx, &xty) {
        return Ok(OlsModel {
            coefficients: beta,
            ridge_fallback: false,
        });
    }
    if !allow_ridge {
        return Err(BenchmarkError::SingularDesign);
    }
    let mut ridged = xtx;
    for (i, r) in ridged.iter_mut().enumerate() {
        r[i] += RIDGE_LAMBDA;
    }
    match cholesky_solve(&ridged, &xty) {
        Some(beta) => Ok(OlsModel {
            coefficients: beta,
            ridge_fallback: true,
        }),
        None => Err(BenchmarkError::SingularDesign),
    }
}

pub fn ols_predict(model: &OlsModel, prefix: &[f64]) -> f64 {
    model.coefficients[0]
        + model.coefficients[1..]
            .iter()
            .zip(prefix)
            .map(|(b, x)| b * x)
            .sum::<f64>()
}

/// Solve `A x = b` for symmetric positive-definite `A`; `None` when a pivot
/// collapses (rank deficiency).
pub(super) fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let p = a.len();
    let tol = 1e-12
        * a.iter()
            .enumerate()
            .map(|(i, r)| r[i].abs())
            .fold(1e-300, f64::max);
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i][j];
            for m in 0..j {
                sum -= l[i][m] * l[j][m];
            }
            if i == j {
                if sum <= tol {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut sum = b[i];
        for m in 0..i {
            sum -= l[i][m] * y[m];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut sum = y[i];
        for m in i + 1..p {
            sum -= l[m][i] * x[m];
        }
        x[i] = sum / l[i][i];
    }
    Some(x)
}
