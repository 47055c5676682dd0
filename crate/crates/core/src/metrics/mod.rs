//! Latent-space distortion, retraining variability, baseline
//! normalization, run summaries and linear-map diagnostics.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::EmbeddingTable;
use crate::linalg::{covariance, log_det_psd, polar_decompose, solve_least_squares, svd, symmetric_eigen, LinalgError, Matrix, Vector};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("affine fit needs more than {dim} rows, got {rows}")]
    Underdetermined { rows: usize, dim: usize },
    #[error("{what}: shapes {left:?} and {right:?} are incompatible")]
    DimMismatch {
        what: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("retraining variability needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("run {0} covers a different set or order of rows")]
    MisalignedRuns(usize),
    #[error("baseline is empty")]
    EmptyBaseline,
    #[error("map has zero linear part")]
    ZeroMap,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `z ↦ A·z + b` fitted from one latent space onto another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: Matrix,
    pub b: Vector,
    /// Mean squared mapped error on the rows used for fitting.
    pub fit_residual: f64,
    /// The design matrix was numerically rank deficient.
    pub rank_deficient: bool,
}

impl AffineMap {
    /// Maps every row of `source`.
    pub fn apply(&self, source: &Matrix) -> Result<Matrix, MetricsError> {
        if source.cols() != self.a.cols() {
            return Err(MetricsError::DimMismatch {
                what: "affine map input",
                left: self.a.shape(),
                right: source.shape(),
            });
        }
        let mut out = source.matmul_transposed(&self.a)?;
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(self.b.iter()) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// Least-squares affine map from `source` rows onto `target` rows.
pub fn fit_affine(source: &Matrix, target: &Matrix) -> Result<AffineMap, MetricsError> {
    if source.rows() != target.rows() {
        return Err(MetricsError::DimMismatch {
            what: "fit_affine",
            left: source.shape(),
            right: target.shape(),
        });
    }
    let (n, d) = source.shape();
    if n <= d {
        return Err(MetricsError::Underdetermined { rows: n, dim: d });
    }
    let design = source.hstack(&Matrix::new(n, 1, vec![1.0; n])?)?;
    let ls = solve_least_squares(&design, target)?;
    // coefficients are (d+1) × d_target: the first d rows are Aᵀ, the last is b
    let coef = ls.coefficients;
    let mut a = Matrix::zeros(target.cols(), d);
    for i in 0..target.cols() {
        for j in 0..d {
            a[(i, j)] = coef[(j, i)];
        }
    }
    let b = Vector::from(coef.row(d));
    let mut map = AffineMap {
        a,
        b,
        fit_residual: 0.0,
        rank_deficient: ls.rank_deficient,
    };
    map.fit_residual = lsd(&map, source, target)?;
    Ok(map)
}

/// Mean over rows of `‖A·source_i + b − target_i‖²`.
pub fn lsd(map: &AffineMap, source: &Matrix, target: &Matrix) -> Result<f64, MetricsError> {
    let mapped = map.apply(source)?;
    if mapped.shape() != target.shape() {
        return Err(MetricsError::DimMismatch {
            what: "lsd",
            left: mapped.shape(),
            right: target.shape(),
        });
    }
    if target.rows() == 0 {
        return Err(MetricsError::Underdetermined { rows: 0, dim: target.cols() });
    }
    let total: f64 = mapped
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(m, t)| (m - t) * (m - t))
        .sum();
    Ok(total / target.rows() as f64)
}

/// Retraining variability over a set of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variability {
    /// Mean of `per_point`.
    pub value: f64,
    /// Floored log-determinant of each datum's across-run covariance.
    pub per_point: Vec<f64>,
    /// Fewer runs than latent dims + 1, so every covariance is singular and
    /// the floor dominates.
    pub degenerate: bool,
}

/// For each datum, the log-determinant of the covariance of its mean
/// embedding across runs, averaged over data. Eigenvalues are floored at
/// `eigen_floor` before taking logs.
pub fn retraining_variability(runs: &[EmbeddingTable], eigen_floor: f64) -> Result<Variability, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.indices != runs[0].indices || r.means.cols() != runs[0].means.cols() {
            return Err(MetricsError::MisalignedRuns(i));
        }
    }
    let means: Vec<&Matrix> = runs.iter().map(|r| &r.means).collect();
    variability_of_means(&means, eigen_floor)
}

/// [`retraining_variability`] on bare mean matrices with aligned rows.
pub fn variability_of_means(runs: &[&Matrix], eigen_floor: f64) -> Result<Variability, MetricsError> {
    let m = runs.len();
    if m < 2 {
        return Err(MetricsError::TooFewRuns(m));
    }
    let (n, d) = runs[0].shape();
    if let Some(i) = runs.iter().position(|r| r.shape() != (n, d)) {
        return Err(MetricsError::MisalignedRuns(i));
    }
    if n == 0 {
        return Err(MetricsError::Underdetermined { rows: 0, dim: d });
    }
    let degenerate = m <= d;
    if degenerate {
        warn!("retraining variability with {m} runs in {d} dims: covariances are singular, floor dominates");
    }
    let mut per_point = Vec::with_capacity(n);
    let mut stack = Matrix::zeros(m, d);
    for i in 0..n {
        for (k, run) in runs.iter().enumerate() {
            stack.row_mut(k).copy_from_slice(run.row(i));
        }
        per_point.push(log_det_psd(&covariance(&stack)?, eigen_floor)?);
    }
    let value = per_point.iter().sum::<f64>() / n as f64;
    Ok(Variability {
        value,
        per_point,
        degenerate,
    })
}

/// Subtracts the baseline median from every value.
pub fn normalize_by_baseline(values: &[f64], baseline: &[f64]) -> Result<Vec<f64>, MetricsError> {
    let m = median(baseline).ok_or(MetricsError::EmptyBaseline)?;
    Ok(values.iter().map(|v| v - m).collect())
}

/// Linear-interpolation quantile of unsorted `values`, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Interquartile range, `Q3 − Q1`.
pub fn iqr(values: &[f64]) -> Option<f64> {
    Some(quantile(values, 0.75)? - quantile(values, 0.25)?)
}

/// Median and interquartile range of a set of run results.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            median: median(values)?,
            iqr: iqr(values)?,
            n: values.len(),
        })
    }

    /// `median(iqr)` with two and three decimals, e.g. `0.00(0.193)`.
    pub fn cell(&self) -> String {
        format!("{:.2}({:.3})", self.median, self.iqr)
    }
}

/// Shape diagnostics of the linear part of an [`AffineMap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapAnalysis {
    /// Eigenvalues of the symmetric factor `P` in `A = U·P`, nonincreasing.
    pub spectrum: Vec<f64>,
    /// `‖A/σ_max(A) − I‖_F`.
    pub identity_distance: f64,
    /// `‖b‖₂`.
    pub bias_norm: f64,
}

pub fn analyze_map(map: &AffineMap) -> Result<MapAnalysis, MetricsError> {
    let a = &map.a;
    let polar = polar_decompose(a)?;
    let mut spectrum = symmetric_eigen(&polar.p)?.values.into_vec();
    spectrum.sort_by(|x, y| y.total_cmp(x));
    let sigma_max = svd(a)?.s.first().copied().unwrap_or(0.0);
    if !(sigma_max > 0.0) {
        return Err(MetricsError::ZeroMap);
    }
    let n = a.rows();
    let mut dist = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)] / sigma_max - if i == j { 1.0 } else { 0.0 };
            dist += v * v;
        }
    }
    Ok(MapAnalysis {
        spectrum,
        identity_distance: dist.sqrt(),
        bias_norm: map.b.norm(),
    })
}
