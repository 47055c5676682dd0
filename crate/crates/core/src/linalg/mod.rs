//! Dense real linear algebra: matrices, Jacobi-based factorizations, least
//! squares, sample covariance and floored log-determinants.
//!
//! Everything here is a pure function of its inputs.

mod decompose;
mod matrix;

pub use decompose::{
    cholesky, cholesky_solve, polar_decompose, svd, symmetric_eigen, Polar, Svd, SymmetricEigen,
    JACOBI_TOL, MAX_SWEEPS,
};
pub use matrix::{dot, squared_distance, Matrix, Vector};

use thiserror::Error;

/// Default floor applied to covariance eigenvalues before taking logs.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length mismatch: expected {expected}, got {got}")]
    InvalidData { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("input contains non-finite entries")]
    NonFiniteInput,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("eigen floor must be positive, got {0}")]
    InvalidFloor(f64),
}

/// Result of [`solve_least_squares`].
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub coefficients: Matrix,
    /// Set when the design had numerically dependent columns and the
    /// minimum-norm pseudoinverse solution was returned.
    pub rank_deficient: bool,
}

/// Minimizes `‖design · x − targets‖_F` over `x`.
///
/// Normal equations with a Cholesky solve; falls back to an SVD
/// pseudoinverse when the Gram matrix is singular or badly conditioned.
pub fn solve_least_squares(design: &Matrix, targets: &Matrix) -> Result<LeastSquares, LinalgError> {
    if design.rows() != targets.rows() {
        return Err(LinalgError::DimensionMismatch {
            op: "solve_least_squares",
            left: design.shape(),
            right: targets.shape(),
        });
    }
    if design.rows() < design.cols() {
        return Err(LinalgError::TooFewRows {
            needed: design.cols(),
            got: design.rows(),
        });
    }
    let gram = design.transposed_matmul(design)?;
    let rhs = design.transposed_matmul(targets)?;
    if let Ok(l) = cholesky(&gram) {
        let diag = l.diag();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min / max > 1e-7 {
            return Ok(LeastSquares {
                coefficients: cholesky_solve(&l, &rhs)?,
                rank_deficient: false,
            });
        }
    }
    pseudoinverse_solve(design, targets)
}

fn pseudoinverse_solve(design: &Matrix, targets: &Matrix) -> Result<LeastSquares, LinalgError> {
    let Svd { u, s, vt } = svd(design)?;
    let tol = s.first().copied().unwrap_or(0.0) * 1e-12 * design.rows().max(design.cols()) as f64;
    let rank = s.iter().filter(|&&v| v > tol).count();
    let rank_deficient = rank < design.cols();
    if rank_deficient {
        log::warn!(
            "least squares design is rank deficient (rank {rank} of {}); using pseudoinverse",
            design.cols()
        );
    }
    // x = V · diag(1/s) · Uᵀ · targets
    let mut ut_t = u.transposed_matmul(targets)?;
    for k in 0..ut_t.rows() {
        let inv = if s[k] > tol { 1.0 / s[k] } else { 0.0 };
        ut_t.row_mut(k).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(LeastSquares {
        coefficients: vt.transposed_matmul(&ut_t)?,
        rank_deficient,
    })
}

/// Sample covariance (denominator `M − 1`) of the rows of `samples`.
pub fn covariance(samples: &Matrix) -> Result<Matrix, LinalgError> {
    let (m, d) = samples.shape();
    if m < 2 {
        return Err(LinalgError::TooFewRows { needed: 2, got: m });
    }
    let means = samples.column_means();
    let mut cov = Matrix::zeros(d, d);
    for row in samples.row_iter() {
        for i in 0..d {
            let di = row[i] - means[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - means[j]);
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// `Σ log(max(λᵢ, floor))` over the eigenvalues of a symmetric matrix.
pub fn log_det_psd(m: &Matrix, eigen_floor: f64) -> Result<f64, LinalgError> {
    if !(eigen_floor > 0.0) {
        return Err(LinalgError::InvalidFloor(eigen_floor));
    }
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let asym = m.asymmetry();
    if asym > 1e-9 * m.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    let eig = symmetric_eigen(m)?;
    Ok(eig.values.iter().map(|&l| l.max(eigen_floor).ln()).sum())
}

/// Number of free below-diagonal entries of a `d × d` lower-triangular factor.
pub fn lower_len(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// Index of entry `(i, j)`, `j < i`, in the row-major strictly-lower packing.
pub fn lower_index(i: usize, j: usize) -> usize {
    debug_assert!(j < i);
    i * (i - 1) / 2 + j
}

/// Lower-triangular factor with diagonal `exp(diag_raw)` and strictly-lower
/// entries taken from `lower_flat` in row-major order.
pub fn build_cholesky(diag_raw: &[f64], lower_flat: &[f64]) -> Result<Matrix, LinalgError> {
    let d = diag_raw.len();
    if lower_flat.len() != lower_len(d) {
        return Err(LinalgError::InvalidData {
            expected: lower_len(d),
            got: lower_flat.len(),
        });
    }
    let mut l = Matrix::zeros(d, d);
    for i in 0..d {
        l[(i, i)] = diag_raw[i].exp();
        for j in 0..i {
            l[(i, j)] = lower_flat[lower_index(i, j)];
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests;
