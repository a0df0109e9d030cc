//! Gaussian-kernel nu-one-class SVM, the novelty detector shared by the
//! bag-of-words and per-sample baseline pipelines.
//!
//! The dual is solved with pairwise (SMO-style) updates under the simplex
//! box constraints of the nu formulation. Stored duals are normalized to
//! sum to one; the decision function is f(x) = sum_i a_i K(x_i, x) - rho
//! with anomalies at f(x) < 0.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Gaussian kernel K(x, y) = exp(-gamma * ||x - y||^2).
#[inline]
pub fn gaussian_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut d = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        d += t * t;
    }
    (-gamma * d).exp()
}

/// Trained one-class SVM with normalized duals (sum of alphas = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
}

impl OcSvmModel {
    /// Decision value; negative means anomalous.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (sv, a) in self.support_vectors.iter().zip(&self.alphas) {
            s += a * gaussian_kernel(sv, x, self.gamma);
        }
        s - self.rho
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, |v| v.len())
    }
}

const KKT_TOL: f64 = 1e-4;
const MAX_SMO_ITER: usize = 200_000;
const SV_KEEP_EPS: f64 = 1e-9;

/// Solves the nu-one-class dual to KKT tolerance 1e-4.
///
/// Internally the libsvm scaling is used (0 <= alpha <= 1, sum = nu * n);
/// the stored model divides alphas and rho by nu * n so the duals sum to 1.
/// The seed only permutes the feasible initialization.
pub fn train_ocsvm(data: &[Vec<f64>], nu: f64, gamma: f64, seed: u64) -> Result<OcSvmModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "one-class SVM needs at least 2 rows, got {n}"
        )));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu must be in (0, 1], got {nu}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let dim = data[0].len();
    if data.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument("ragged training rows".into()));
    }

    // Dense kernel cache; training sets are desk-scale by construction.
    let q: Vec<Vec<f64>> = data
        .iter()
        .map(|a| data.iter().map(|b| gaussian_kernel(a, b, gamma)).collect())
        .collect();

    // Feasible start: sum(alpha) = nu * n with the mass on a seeded
    // permutation, mirroring the usual one-class initialization.
    let budget = nu * n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, "ocsvm-init", 0));
    let mut alpha = vec![0.0f64; n];
    let mut remaining = budget;
    for &i in &order {
        let take = remaining.min(1.0);
        alpha[i] = take;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }

    // Gradient of 1/2 a' Q a is Q a.
    let mut grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| q[i][j] * alpha[j]).sum())
        .collect();

    let mut converged = false;
    for _ in 0..MAX_SMO_ITER {
        // Most violating pair: i can grow (alpha_i < 1, smallest gradient),
        // j can shrink (alpha_j > 0, largest gradient).
        let mut i_best: Option<(usize, f64)> = None;
        let mut j_best: Option<(usize, f64)> = None;
        for t in 0..n {
            if alpha[t] < 1.0 - 1e-12 && i_best.map_or(true, |(_, g)| grad[t] < g) {
                i_best = Some((t, grad[t]));
            }
            if alpha[t] > 1e-12 && j_best.map_or(true, |(_, g)| grad[t] > g) {
                j_best = Some((t, grad[t]));
            }
        }
        let (Some((i, gi)), Some((j, gj))) = (i_best, j_best) else {
            break;
        };
        if gj - gi < KKT_TOL {
            converged = true;
            break;
        }
        // Move delta from alpha_j to alpha_i along the equality constraint.
        let denom = (q[i][i] + q[j][j] - 2.0 * q[i][j]).max(1e-12);
        let delta = ((gj - gi) / denom).min(1.0 - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        for t in 0..n {
            grad[t] += delta * (q[t][i] - q[t][j]);
        }
    }
    if !converged {
        // Residual for the error message: the remaining KKT gap.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < 1.0 - 1e-12 {
                lo = lo.min(grad[t]);
            }
            if alpha[t] > 1e-12 {
                hi = hi.max(grad[t]);
            }
        }
        return Err(Error::NonConvergence(format!(
            "one-class SVM KKT gap {} after {MAX_SMO_ITER} iterations",
            hi - lo
        )));
    }

    // rho: average gradient over free vectors, or the bound midpoint.
    let free: Vec<usize> = (0..n)
        .filter(|&t| alpha[t] > 1e-12 && alpha[t] < 1.0 - 1e-12)
        .collect();
    let rho = if !free.is_empty() {
        free.iter().map(|&t| grad[t]).sum::<f64>() / free.len() as f64
    } else {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for t in 0..n {
            if alpha[t] > 1e-12 {
                lo = lo.max(grad[t]);
            } else {
                hi = hi.min(grad[t]);
            }
        }
        if hi.is_infinite() {
            lo
        } else {
            0.5 * (lo + hi)
        }
    };

    // The nu-property: at the solution, strict outliers sit at the upper
    // bound, so their fraction cannot exceed nu (plus solver slack).
    let outliers = (0..n).filter(|&t| grad[t] - rho < -KKT_TOL).count();
    assert!(
        outliers as f64 <= nu * n as f64 + 2.0,
        "nu-property violated: {outliers} outliers for nu = {nu}, n = {n}"
    );

    let scale = 1.0 / budget;
    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for t in 0..n {
        if alpha[t] > SV_KEEP_EPS {
            support_vectors.push(data[t].clone());
            alphas.push(alpha[t] * scale);
        }
    }
    Ok(OcSvmModel {
        support_vectors,
        alphas,
        rho: rho * scale,
        gamma,
        nu,
    })
}

/// Fraction of rows classified anomalous by `model`.
pub fn flagged_fraction(model: &OcSvmModel, data: &[Vec<f64>]) -> f64 {
    let flagged = data.iter().filter(|x| model.decision(x) < 0.0).count();
    flagged as f64 / data.len() as f64
}

/// Candidate nu values tried by the grid search.
pub const DEFAULT_NU_GRID: [f64; 8] = [0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4];

/// Default gamma grid {2^-7 .. 2^3}.
pub fn default_gamma_grid() -> Vec<f64> {
    (-7..=3).map(|e| (e as f64).exp2()).collect()
}

/// Splits benign rows into train/validation, fits each (nu, gamma) pair, and
/// returns the pair whose measured validation false-positive rate is closest
/// to `target_fp`. Ties break to the smaller gamma, then the smaller nu.
pub fn grid_search_ocsvm(
    data: &[Vec<f64>],
    target_fp: f64,
    gamma_grid: &[f64],
    seed: u64,
) -> Result<(f64, f64)> {
    if gamma_grid.is_empty() {
        return Err(Error::EmptyInput("empty gamma grid".into()));
    }
    if data.len() < 4 {
        return Err(Error::InvalidArgument(
            "grid search needs at least 4 rows".into(),
        ));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from(seed, "ocsvm-grid-split", 0));
    let split = (data.len() * 7 / 10).max(2);
    let train: Vec<Vec<f64>> = order[..split].iter().map(|&i| data[i].clone()).collect();
    let valid: Vec<Vec<f64>> = order[split..].iter().map(|&i| data[i].clone()).collect();

    let mut gammas = gamma_grid.to_vec();
    gammas.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(f64, f64, f64)> = None; // (|fp - target|, gamma, nu)
    for &gamma in &gammas {
        for &nu in &DEFAULT_NU_GRID {
            let model = train_ocsvm(&train, nu, gamma, seed)?;
            let fp = flagged_fraction(&model, &valid);
            let miss = (fp - target_fp).abs();
            let better = match best {
                None => true,
                Some((m, g, n)) => {
                    miss < m - 1e-12
                        || (miss <= m + 1e-12 && (gamma < g || (gamma == g && nu < n)))
                }
            };
            if better {
                best = Some((miss, gamma, nu));
            }
        }
    }
    let (_, gamma, nu) = best.unwrap();
    Ok((nu, gamma))
}
