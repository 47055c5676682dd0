//! Factorizations built on plain Jacobi rotations.
//!
//! The matrices handled here are small (latent dimensions up to a few dozen),
//! so cyclic Jacobi sweeps are used for both the SVD and the symmetric
//! eigenproblem: they are simple, deterministic and accurate to machine
//! precision at these sizes.

use super::{dot, LinalgError, Matrix, Vector};

/// Sweep cap for the Jacobi iterations.
pub const MAX_SWEEPS: usize = 100;
/// Relative off-diagonal threshold at which a sweep is considered converged.
pub const JACOBI_TOL: f64 = 1e-12;

/// Thin singular value decomposition `m = u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix,
    /// Singular values, nonincreasing and nonnegative.
    pub s: Vector,
    /// `k × cols` with orthonormal rows.
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, v) in us.row_mut(i).iter_mut().enumerate() {
                *v *= self.s[j];
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformable")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFiniteInput);
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        });
    }
    svd_tall(m)
}

fn svd_tall(m: &Matrix) -> Result<Svd, LinalgError> {
    let (rows, cols) = m.shape();
    // Work on columns: keep them as contiguous vectors.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = cols < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps });
        }
        sweeps += 1;
        let mut worst: f64 = 0.0;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || gamma == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / scale;
                worst = worst.max(rel);
                if rel <= JACOBI_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = worst <= JACOBI_TOL;
    }

    let mut order: Vec<(usize, f64)> = a.iter().map(|col| dot(col, col).sqrt()).enumerate().collect();
    // Stable sort keeps lowest index first on ties.
    order.sort_by(|x, y| y.1.total_cmp(&x.1));

    let s_max = order.first().map_or(0.0, |o| o.1);
    let cutoff = s_max * f64::EPSILON * rows.max(cols) as f64;
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut vt = Matrix::zeros(cols, cols);
    for (k, &(j, sigma)) in order.iter().enumerate() {
        s.push(sigma);
        vt.row_mut(k).copy_from_slice(&v[j]);
        if sigma > cutoff && sigma > 0.0 {
            u_cols.push(Some(a[j].iter().map(|x| x / sigma).collect()));
        } else {
            u_cols.push(None);
        }
    }
    let u_cols = complete_orthonormal(u_cols, rows);
    let mut u = Matrix::zeros(rows, cols);
    for (j, col) in u_cols.iter().enumerate() {
        for i in 0..rows {
            u[(i, j)] = col[i];
        }
    }
    Ok(Svd {
        u,
        s: Vector::from(s),
        vt,
    })
}

/// Rotates columns `p`, `q` of a column-stored matrix.
fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills missing columns with unit vectors orthogonal to the present ones.
fn complete_orthonormal(cols: Vec<Option<Vec<f64>>>, dim: usize) -> Vec<Vec<f64>> {
    let mut done: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let present: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut basis_next = 0;
    for col in cols {
        match col {
            Some(c) => done.push(c),
            None => {
                let mut found = None;
                while basis_next < dim {
                    let mut cand = vec![0.0; dim];
                    cand[basis_next] = 1.0;
                    basis_next += 1;
                    // two passes of Gram-Schmidt for stability
                    for _ in 0..2 {
                        for other in present.iter().chain(done.iter()) {
                            let proj = dot(&cand, other);
                            cand.iter_mut().zip(other).for_each(|(c, o)| *c -= proj * o);
                        }
                    }
                    let norm = dot(&cand, &cand).sqrt();
                    if norm > 1e-6 {
                        cand.iter_mut().for_each(|c| *c /= norm);
                        found = Some(cand);
                        break;
                    }
                }
                done.push(found.expect("orthonormal completion exhausted basis"));
            }
        }
    }
    done
}

/// Polar decomposition `a = u · p` with `u` orthogonal and `p` symmetric PSD.
#[derive(Clone, Debug)]
pub struct Polar {
    pub u: Matrix,
    pub p: Matrix,
    /// Singular values of `a`, equal to the eigenvalues of `p`.
    pub singular_values: Vector,
}

pub fn polar_decompose(a: &Matrix) -> Result<Polar, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let Svd { u, s, vt } = svd(a)?;
    let orth = u.matmul(&vt)?;
    let n = a.rows();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..n).map(|k| vt[(k, i)] * s[k] * vt[(k, j)]).sum();
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Ok(Polar {
        u: orth,
        p,
        singular_values: s,
    })
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues, nonincreasing.
    pub values: Vector,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigensolver. The strict lower triangle is ignored beyond
/// the symmetry it is assumed to have.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFiniteInput);
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off <= JACOBI_TOL * JACOBI_TOL * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, k)] = v[(i, src)];
        }
    }
    Ok(SymmetricEigen {
        values: Vector::from(values),
        vectors,
    })
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Matrix) -> Result<Matrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `l · lᵀ · x = b` for each column of `b`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    let n = l.rows();
    if b.rows() != n {
        return Err(LinalgError::DimensionMismatch {
            op: "cholesky_solve",
            left: l.shape(),
            right: b.shape(),
        });
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        // forward: l y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}
