use std::f64::consts::PI;

use super::{check_k, kmeans, DistillError, KmeansConfig};
use crate::linalg::{cholesky, symmetric_eigen, Matrix};

pub const GMM_ITERATIONS: usize = 50;
const DEGENERATE_EIGENVALUE: f64 = 1e-10;

/// Fitted full-covariance Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmResult {
    pub weights: Vec<f64>,
    pub means: Matrix,
    pub covariances: Vec<Matrix>,
    /// Most responsible component per row (ties → lowest index).
    pub assignments: Vec<usize>,
    /// Times a degenerate covariance was replaced by the identity.
    pub resets: usize,
    pub log_likelihood: f64,
}

fn is_degenerate(cov: &Matrix) -> bool {
    match symmetric_eigen(cov) {
        Ok(e) => e.values.iter().any(|&v| !(v >= DEGENERATE_EIGENVALUE)),
        Err(_) => true,
    }
}

/// Log density of every row under `N(mean, cov)`; `cov` must be PD.
fn log_densities(points: &Matrix, mean: &[f64], cov: &Matrix) -> Vec<f64> {
    let d = points.cols();
    let l = cholesky(cov).expect("non-degenerate covariance");
    let log_det: f64 = 2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>();
    let norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
    points
        .row_iter()
        .map(|row| {
            // forward substitution L·y = x − μ, quadratic form = ‖y‖²
            let mut y = vec![0.0; d];
            for i in 0..d {
                let mut s = row[i] - mean[i];
                for j in 0..i {
                    s -= l[(i, j)] * y[j];
                }
                y[i] = s / l[(i, i)];
            }
            norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>()
        })
        .collect()
}

/// Expectation-maximization for a `k`-component full-covariance mixture.
///
/// Starts from a k-means partition with spherical per-cluster covariances,
/// then runs [`GMM_ITERATIONS`] full EM rounds. A covariance with an
/// eigenvalue below 1e-10 is reset to the identity and counted in `resets`.
pub fn gmm(points: &Matrix, k: usize, seed: u64) -> Result<GmmResult, DistillError> {
    let (n, d) = points.shape();
    check_k(k, n)?;
    let init = kmeans(points, k, seed, &KmeansConfig::default())?;
    let mut means = init.centroids.clone();
    let mut weights = vec![0.0; k];
    let mut spread = vec![0.0; k];
    for (row, &c) in points.row_iter().zip(&init.assignments) {
        weights[c] += 1.0;
        spread[c] += row.iter().zip(means.row(c)).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
    }
    let mut resets = 0;
    let mut covariances: Vec<Matrix> = (0..k)
        .map(|c| {
            let var = spread[c] / (weights[c] * d as f64).max(1.0);
            Matrix::identity(d).scale(var)
        })
        .collect();
    for w in weights.iter_mut() {
        *w /= n as f64;
    }
    for cov in covariances.iter_mut() {
        if is_degenerate(cov) {
            *cov = Matrix::identity(d);
            resets += 1;
        }
    }

    let mut resp = Matrix::zeros(n, k);
    let mut log_likelihood = f64::NEG_INFINITY;
    for _ in 0..GMM_ITERATIONS {
        // E step with log-sum-exp normalization
        let dens: Vec<Vec<f64>> = (0..k).map(|c| log_densities(points, means.row(c), &covariances[c])).collect();
        log_likelihood = 0.0;
        for i in 0..n {
            let logs: Vec<f64> = (0..k)
                .map(|c| if weights[c] > 0.0 { weights[c].ln() + dens[c][i] } else { f64::NEG_INFINITY })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            log_likelihood += lse;
            for c in 0..k {
                resp[(i, c)] = (logs[c] - lse).exp();
            }
        }
        // M step
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[(i, c)]).sum();
            weights[c] = nk / n as f64;
            if nk <= f64::EPSILON {
                covariances[c] = Matrix::identity(d);
                resets += 1;
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, row) in points.row_iter().enumerate() {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += resp[(i, c)] * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut cov = Matrix::zeros(d, d);
            for (i, row) in points.row_iter().enumerate() {
                let r = resp[(i, c)];
                for a in 0..d {
                    for b in a..d {
                        cov[(a, b)] += r * (row[a] - mean[a]) * (row[b] - mean[b]);
                    }
                }
            }
            for a in 0..d {
                for b in a..d {
                    let v = cov[(a, b)] / nk;
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            means.row_mut(c).copy_from_slice(&mean);
            if is_degenerate(&cov) {
                cov = Matrix::identity(d);
                resets += 1;
            }
            covariances[c] = cov;
        }
    }
    let assignments = (0..n)
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, 0);
            for c in 0..k {
                if resp[(i, c)] > best.0 {
                    best = (resp[(i, c)], c);
                }
            }
            best.1
        })
        .collect();
    Ok(GmmResult {
        weights,
        means,
        covariances,
        assignments,
        resets,
        log_likelihood,
    })
}
