//! Logistic regression by Newton's method with step halving. The positive
//! class (label 1) is "does poorly".

use super::linear::cholesky_solve;
use super::BenchmarkError;

/// Convergence: gradient infinity-norm below this, or the iteration cap.
pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 500;
/// Coefficient norm at which the fit is declared separated and capped. On
/// standardized features this is an odds ratio of e^10 per unit, far beyond
/// any non-separated fit.
pub const SEPARATION_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// `coefficients[0]` is the intercept.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    /// Set when the coefficient norm hit [`SEPARATION_NORM`] (perfect or
    /// near-perfect separation); the returned solution is norm-capped.
    pub separation_flag: bool,
    pub iterations: usize,
    /// Log-likelihood after each accepted step (starting value first).
    pub ll_trace: Vec<f64>,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn linear(beta: &[f64], x: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Log-likelihood of labels under the model, computed stably.
pub fn log_likelihood(beta: &[f64], pairs: &[(&[f64], usize)]) -> f64 {
    pairs
        .iter()
        .map(|(x, y)| {
            let t = linear(beta, x);
            let y = *y as f64;
            // y t - ln(1 + e^t), with ln(1+e^t) = max(t, 0) + ln(1 + e^{-|t|})
            y * t - (t.max(0.0) + (-t.abs()).exp().ln_1p())
        })
        .sum()
}

/// Analytic gradient of the log-likelihood: `sum (y - p) x_tilde`.
pub fn gradient(beta: &[f64], pairs: &[(&[f64], usize)]) -> Vec<f64> {
    let p = beta.len();
    let mut grad = vec![0.0; p];
    for (x, y) in pairs {
        let resid = *y as f64 - sigmoid(linear(beta, x));
        grad[0] += resid;
        for (g, v) in grad[1..].iter_mut().zip(*x) {
            *g += resid * v;
        }
    }
    grad
}

/// Maximum-likelihood fit. Requires both classes present.
pub fn logistic_fit(pairs: &[(&[f64], usize)]) -> Result<LogisticModel, BenchmarkError> {
    let k = pairs
        .first()
        .map(|(x, _)| x.len())
        .ok_or(BenchmarkError::InsufficientRows { rows: 0, required: 2 })?;
    let positives = pairs.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == pairs.len() {
        return Err(BenchmarkError::DegenerateLabels { positives, rows: pairs.len() });
    }
    let p = k + 1;
    let mut beta = vec![0.0; p];
    let mut ll = log_likelihood(&beta, pairs);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let grad = gradient(&beta, pairs);
        if grad.iter().all(|g| g.abs() < GRAD_TOL) {
            converged = true;
            break;
        }
        // Newton direction from the (jittered) negative Hessian sum p(1-p) xx^T.
        let mut hess = vec![vec![0.0; p]; p];
        let mut xt = vec![0.0; p];
        for (x, _) in pairs {
            let s = sigmoid(linear(&beta, x));
            let w = (s * (1.0 - s)).max(1e-12);
            xt[0] = 1.0;
            xt[1..].copy_from_slice(x);
            for i in 0..p {
                for j in i..p {
                    hess[i][j] += w * xt[i] * xt[j];
                }
            }
        }
        for i in 0..p {
            hess[i][i] += 1e-10;
            for j in 0..i {
                hess[i][j] = hess[j][i];
            }
        }
        let direction = match cholesky_solve(&hess, &grad) {
            Some(d) => d,
            None => grad.clone(),
        };
        // Step halving keeps the log-likelihood non-decreasing.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(&direction)
                .map(|(b, d)| b + step * d)
                .collect();
            let cand_ll = log_likelihood(&candidate, pairs);
            if cand_ll >= ll {
                beta = candidate;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true; // no ascent direction left at float precision
            break;
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM {
            let scale = SEPARATION_NORM / norm;
            for b in &mut beta {
                *b *= scale;
            }
            separation = true;
            break;
        }
    }

    Ok(LogisticModel {
        coefficients: beta,
        converged,
        separation_flag: separation,
        iterations,
        ll_trace: trace,
    })
}

/// Class and probability of the positive ("does poorly") class; the class is
/// 1 exactly when the probability reaches 0.5.
pub fn logistic_predict(model: &LogisticModel, prefix: &[f64]) -> (usize, f64) {
    let p = sigmoid(linear(&model.coefficients, prefix));
    (usize::from(p >= 0.5), p)
}
