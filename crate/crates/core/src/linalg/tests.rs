use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn rotation(deg: f64) -> Matrix {
    let t = deg.to_radians();
    Matrix::from_rows(&[[t.cos(), -t.sin()], [t.sin(), t.cos()]])
}

fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let diff = a.sub(b).unwrap().max_abs();
    assert!(diff <= tol, "max diff {diff:e} > {tol:e}\n{a:?}\n{b:?}");
}

/// Gauss-Jordan inverse with partial pivoting (oracle only).
fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = m.row(i).to_vec();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let pivot_row = a[c].clone();
                a[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    Matrix::from_rows(&a.iter().map(|r| r[n..].to_vec()).collect::<Vec<_>>())
}

/// Classical Jacobi eigenvalue iteration with max-pivot selection (oracle only).
fn jacobi_eigenvalues_oracle(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _ in 0..10_000 {
        let (mut p, mut q, mut best) = (0, 1, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if a[i][j].abs() > best {
                    best = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if best < 1e-15 {
            break;
        }
        let phi = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
        let (s, c) = phi.sin_cos();
        for k in 0..n {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn orthonormal_columns_error(u: &Matrix) -> f64 {
    let g = u.transposed_matmul(u).unwrap();
    g.sub(&Matrix::identity(u.cols())).unwrap().max_abs()
}

// ---------------------------------------------------------------- lstsq

#[test]
fn lstsq_identity_design_returns_targets() {
    let targets = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [7.0, 0.0]]);
    let x = solve_least_squares(&Matrix::identity(3), &targets).unwrap();
    assert_close(&x.coefficients, &targets, 1e-14);
    assert!(!x.rank_deficient);
}

#[test]
fn lstsq_exact_line_through_origin() {
    let design = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
    let targets = Matrix::from_rows(&[[2.0], [4.0], [6.0]]);
    let x = solve_least_squares(&design, &targets).unwrap();
    assert!((x.coefficients[(0, 0)] - 2.0).abs() < 1e-14);
}

#[test]
fn lstsq_matches_normal_equation_oracle() {
    let design = random_matrix(20, 4, 7);
    let targets = random_matrix(20, 3, 7 + 1000);
    let x = solve_least_squares(&design, &targets).unwrap();
    let gram_inv = gauss_jordan_inverse(&design.transpose().matmul(&design).unwrap());
    let oracle = gram_inv
        .matmul(&design.transpose())
        .unwrap()
        .matmul(&targets)
        .unwrap();
    assert_close(&x.coefficients, &oracle, 1e-9);
    // residual orthogonal to the column space
    let resid = design.matmul(&x.coefficients).unwrap().sub(&targets).unwrap();
    assert!(design.transposed_matmul(&resid).unwrap().max_abs() < 1e-8);
}

#[test]
fn lstsq_rank_deficient_uses_pseudoinverse() {
    let design = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
    let targets = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
    let x = solve_least_squares(&design, &targets).unwrap();
    assert!(x.rank_deficient);
    // minimum-norm solution of x1 + 2 x2 = 1 is (0.2, 0.4)
    assert!((x.coefficients[(0, 0)] - 0.2).abs() < 1e-10);
    assert!((x.coefficients[(1, 0)] - 0.4).abs() < 1e-10);
}

#[test]
fn lstsq_dimension_mismatch() {
    let err = solve_least_squares(&Matrix::identity(3), &Matrix::zeros(2, 1)).unwrap_err();
    assert!(matches!(err, LinalgError::DimensionMismatch { .. }));
}

// ---------------------------------------------------------------- svd

#[test]
fn svd_identity() {
    let s = svd(&Matrix::identity(4)).unwrap();
    assert_eq!(s.s.to_vec(), vec![1.0; 4]);
}

#[test]
fn svd_diagonal_gives_signed_permutations() {
    let m = Matrix::from_diag(&[3.0, 1.0]);
    let s = svd(&m).unwrap();
    assert_eq!(s.s.to_vec(), vec![3.0, 1.0]);
    for f in [&s.u, &s.vt] {
        for v in f.as_slice() {
            assert!(v.abs() < 1e-15 || (v.abs() - 1.0).abs() < 1e-15);
        }
    }
    assert_close(&s.reconstruct(), &m, 1e-14);
}

#[test]
fn svd_matches_jacobi_eigen_oracle() {
    let m = random_matrix(5, 5, 3);
    let s = svd(&m).unwrap();
    let ev = jacobi_eigenvalues_oracle(&m.transpose().matmul(&m).unwrap());
    for (sv, e) in s.s.iter().zip(&ev) {
        assert!((sv - e.max(0.0).sqrt()).abs() < 1e-8, "{sv} vs {}", e.sqrt());
    }
}

#[test]
fn svd_rank_deficient_still_orthonormal() {
    let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
    let s = svd(&m).unwrap();
    assert!(orthonormal_columns_error(&s.u) < 1e-12);
    assert!(orthonormal_columns_error(&s.vt.transpose()) < 1e-12);
    assert_close(&s.reconstruct(), &m, 1e-12);
    assert!(s.s[2] < 1e-12);
}

#[test]
fn svd_zero_matrix() {
    let s = svd(&Matrix::zeros(3, 2)).unwrap();
    assert_eq!(s.s.to_vec(), vec![0.0, 0.0]);
    assert!(orthonormal_columns_error(&s.u) < 1e-12);
}

fn check_svd(m: &Matrix) {
    let s = svd(m).unwrap();
    let rel = s.reconstruct().sub(m).unwrap().frobenius_norm() / m.frobenius_norm().max(1e-300);
    assert!(rel < 1e-9, "reconstruction error {rel:e}");
    assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
    assert!(s.s.iter().all(|&v| v >= 0.0));
    assert!(orthonormal_columns_error(&s.u) < 1e-9);
    assert!(orthonormal_columns_error(&s.vt.transpose()) < 1e-9);
}

#[test]
fn svd_random_shape_classes() {
    for (class, (r, c)) in [(2, 2), (5, 5), (8, 3), (3, 8), (1, 4), (12, 12)].iter().enumerate() {
        for i in 0..100 {
            check_svd(&random_matrix(*r, *c, (class * 1000 + i) as u64));
        }
    }
}

// ---------------------------------------------------------------- polar

#[test]
fn polar_of_rotation_is_rotation_and_identity() {
    let r = rotation(30.0);
    let p = polar_decompose(&r).unwrap();
    assert_close(&p.u, &r, 1e-12);
    assert_close(&p.p, &Matrix::identity(2), 1e-12);
}

#[test]
fn polar_of_spd_is_identity_and_itself() {
    let a = Matrix::from_diag(&[2.0, 0.5]);
    let p = polar_decompose(&a).unwrap();
    assert_close(&p.u, &Matrix::identity(2), 1e-12);
    assert_close(&p.p, &a, 1e-12);
}

#[test]
fn polar_recovers_stretch_spectrum() {
    let a = rotation(45.0).matmul(&Matrix::from_diag(&[3.0, 1.0])).unwrap();
    let p = polar_decompose(&a).unwrap();
    // compose-and-refactor: U·P must reproduce a; P from the SVD route
    assert_close(&p.u.matmul(&p.p).unwrap(), &a, 1e-12);
    let eig = symmetric_eigen(&p.p).unwrap();
    assert!((eig.values[0] - 3.0).abs() < 1e-12 && (eig.values[1] - 1.0).abs() < 1e-12);
    let s = svd(&a).unwrap();
    let p_svd = s.vt.transposed_matmul(&Matrix::from_diag(&s.s).matmul(&s.vt).unwrap()).unwrap();
    assert_close(&p.p, &p_svd, 1e-12);
}

#[test]
fn polar_rejects_non_square() {
    assert!(matches!(
        polar_decompose(&Matrix::zeros(2, 3)),
        Err(LinalgError::NotSquare { .. })
    ));
}

fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let s = svd(&random_matrix(n, n, seed)).unwrap();
    s.u.matmul(&s.vt).unwrap()
}

proptest! {
    #[test]
    fn polar_recovers_factors(seed in 0u64..10_000, n in 2usize..6) {
        let u = random_orthogonal(n, seed);
        let b = random_matrix(n, n, seed + 77);
        // SPD with eigenvalues bounded away from zero
        let p = b.transposed_matmul(&b).unwrap().add(&Matrix::identity(n).scale(0.5)).unwrap();
        let a = u.matmul(&p).unwrap();
        let pol = polar_decompose(&a).unwrap();
        prop_assert!(pol.u.sub(&u).unwrap().max_abs() < 1e-8);
        prop_assert!(pol.p.sub(&p).unwrap().max_abs() < 1e-8 * p.max_abs().max(1.0));
        prop_assert!(orthonormal_columns_error(&pol.u) < 1e-9);
    }
}

// ---------------------------------------------------------------- covariance

#[test]
fn covariance_of_identical_rows_is_zero() {
    let c = covariance(&Matrix::from_rows(&[[1.5, -2.0], [1.5, -2.0]])).unwrap();
    assert_eq!(c, Matrix::zeros(2, 2));
}

#[test]
fn covariance_square_corners() {
    let c = covariance(&Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])).unwrap();
    assert_close(&c, &Matrix::from_diag(&[4.0 / 3.0, 4.0 / 3.0]), 1e-15);
}

#[test]
fn covariance_matches_two_pass_oracle() {
    let x = random_matrix(10, 3, 11);
    let c = covariance(&x).unwrap();
    let n = x.rows() as f64;
    let mut oracle = Matrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            let mi: f64 = x.column(i).iter().sum::<f64>() / n;
            let mj: f64 = x.column(j).iter().sum::<f64>() / n;
            let s: f64 = x.row_iter().map(|r| (r[i] - mi) * (r[j] - mj)).sum();
            oracle[(i, j)] = s / (n - 1.0);
        }
    }
    assert_close(&c, &oracle, 1e-12);
}

#[test]
fn covariance_needs_two_rows() {
    assert!(matches!(
        covariance(&Matrix::zeros(1, 2)),
        Err(LinalgError::TooFewRows { .. })
    ));
}

proptest! {
    #[test]
    fn covariance_symmetric_psd(seed in 0u64..10_000, m in 2usize..12, d in 1usize..5) {
        let c = covariance(&random_matrix(m, d, seed)).unwrap();
        prop_assert_eq!(c.asymmetry(), 0.0);
        let eig = symmetric_eigen(&c).unwrap();
        prop_assert!(eig.values.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn log_det_of_scaled_identity(c in 1e-12f64..1e6, d in 1usize..6) {
        let m = Matrix::identity(d).scale(c);
        let ld = log_det_psd(&m, 1e-12).unwrap();
        prop_assert!((ld - d as f64 * c.ln()).abs() < 1e-9 * (1.0 + ld.abs()));
    }
}

// ---------------------------------------------------------------- log det

#[test]
fn log_det_identity_is_zero() {
    assert_eq!(log_det_psd(&Matrix::identity(3), 1e-12).unwrap(), 0.0);
}

#[test]
fn log_det_sums_logs() {
    let e = std::f64::consts::E;
    let v = log_det_psd(&Matrix::from_diag(&[e, e * e]), 1e-12).unwrap();
    assert!((v - 3.0).abs() < 1e-14);
}

#[test]
fn log_det_floor_engages() {
    let v = log_det_psd(&Matrix::zeros(2, 2), 1e-12).unwrap();
    assert!((v - 2.0 * 1e-12f64.ln()).abs() < 1e-12);
}

#[test]
fn log_det_rejects_asymmetric_and_bad_floor() {
    let m = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]);
    assert!(matches!(log_det_psd(&m, 1e-12), Err(LinalgError::NotSymmetric { .. })));
    assert!(matches!(log_det_psd(&Matrix::identity(2), 0.0), Err(LinalgError::InvalidFloor(_))));
}

#[test]
fn log_det_monotone_in_eigenvalue() {
    let mut prev = f64::NEG_INFINITY;
    for k in 0..20 {
        let lam = 1e-14 * 10f64.powi(k);
        let v = log_det_psd(&Matrix::from_diag(&[lam, 2.0]), 1e-12).unwrap();
        assert!(v >= prev);
        prev = v;
    }
}

// ---------------------------------------------------------------- cholesky

#[test]
fn build_cholesky_cases() {
    assert_eq!(build_cholesky(&[0.0, 0.0], &[0.0]).unwrap(), Matrix::identity(2));

    let l = build_cholesky(&[0.0, 0.0], &[1.0]).unwrap();
    assert_eq!(l, Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]));
    assert_eq!(
        l.matmul_transposed(&l).unwrap(),
        Matrix::from_rows(&[[1.0, 1.0], [1.0, 2.0]])
    );

    let l = build_cholesky(&[2f64.ln(), 0.0, 3f64.ln()], &[0.0, 0.0, 0.0]).unwrap();
    assert_close(&l, &Matrix::from_diag(&[2.0, 1.0, 3.0]), 1e-15);
}

#[test]
fn build_cholesky_packing_is_row_major() {
    let l = build_cholesky(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(l[(1, 0)], 1.0);
    assert_eq!(l[(2, 0)], 2.0);
    assert_eq!(l[(2, 1)], 3.0);
}

#[test]
fn build_cholesky_length_mismatch() {
    assert!(matches!(
        build_cholesky(&[0.0, 0.0], &[]),
        Err(LinalgError::InvalidData { expected: 1, got: 0 })
    ));
}

#[test]
fn cholesky_roundtrip_and_solve() {
    let b = random_matrix(4, 4, 5);
    let spd = b.transposed_matmul(&b).unwrap().add(&Matrix::identity(4)).unwrap();
    let l = cholesky(&spd).unwrap();
    assert_close(&l.matmul_transposed(&l).unwrap(), &spd, 1e-12);
    let rhs = random_matrix(4, 2, 6);
    let x = cholesky_solve(&l, &rhs).unwrap();
    assert_close(&spd.matmul(&x).unwrap(), &rhs, 1e-10);
    assert!(cholesky(&Matrix::from_diag(&[1.0, -1.0])).is_err());
}

#[test]
fn symmetric_eigen_reconstructs() {
    let b = random_matrix(6, 6, 9);
    let s = b.add(&b.transpose()).unwrap();
    let e = symmetric_eigen(&s).unwrap();
    let recon = e
        .vectors
        .matmul(&Matrix::from_diag(&e.values))
        .unwrap()
        .matmul_transposed(&e.vectors)
        .unwrap();
    assert_close(&recon, &s, 1e-11);
    let oracle = jacobi_eigenvalues_oracle(&s);
    for (a, b) in e.values.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn matrix_new_validates() {
    assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    assert!(matches!(
        Matrix::new(1, 2, vec![1.0, f64::NAN]),
        Err(LinalgError::NonFinite { row: 0, col: 1 })
    ));
}
