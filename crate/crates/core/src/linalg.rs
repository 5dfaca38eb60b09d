//! Small dense linear algebra used by the fitting kernels.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("system is underdetermined: {rows} rows for {cols} unknowns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("matrix is rank deficient (singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("dimension mismatch: matrix has {rows} rows, rhs has {rhs}")]
    DimMismatch { rows: usize, rhs: usize },
}

/// Relative singular-value threshold below which a system counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Least-squares solution of `A x ≈ b` by Householder QR.
///
/// `a` is row-major `rows × cols`. Fails with [`LinalgError::RankDeficient`]
/// when the smallest singular value of `A` is below `RANK_TOL` times the largest.
pub fn solve_least_squares(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    assert_eq!(a.len(), rows * cols, "matrix buffer does not match {rows}x{cols}");
    if b.len() != rows {
        return Err(LinalgError::DimMismatch { rows, rhs: b.len() });
    }
    if rows < cols {
        return Err(LinalgError::Underdetermined { rows, cols });
    }
    let mut r = a.to_vec();
    let mut qtb = b.to_vec();
    let mut v = vec![0.0; rows];

    for k in 0..cols {
        let mut norm = 0.0;
        for i in k..rows {
            norm += r[i * cols + k] * r[i * cols + k];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[k * cols + k] > 0.0 { -norm } else { norm };
        for i in k..rows {
            v[i] = r[i * cols + k];
        }
        v[k] -= alpha;
        let vnorm2: f64 = (k..rows).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..cols {
            let s: f64 = (k..rows).map(|i| v[i] * r[i * cols + j]).sum();
            let f = 2.0 * s / vnorm2;
            for i in k..rows {
                r[i * cols + j] -= f * v[i];
            }
        }
        let s: f64 = (k..rows).map(|i| v[i] * qtb[i]).sum();
        let f = 2.0 * s / vnorm2;
        for i in k..rows {
            qtb[i] -= f * v[i];
        }
    }

    // R shares A's singular values.
    let upper = DMatrix::from_fn(cols, cols, |i, j| if j >= i { r[i * cols + j] } else { 0.0 });
    let sv = upper.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin < RANK_TOL * smax {
        return Err(LinalgError::RankDeficient {
            ratio: if smax == 0.0 { 0.0 } else { smin / smax },
        });
    }

    let mut x = vec![0.0; cols];
    for i in (0..cols).rev() {
        let mut s = qtb[i];
        for j in i + 1..cols {
            s -= r[i * cols + j] * x[j];
        }
        x[i] = s / r[i * cols + i];
    }
    Ok(x)
}

/// Eigenvalues `(λ1, λ2)`, `λ1 ≥ λ2`, of the symmetric matrix `[[a, b], [b, c]]`.
pub fn eigen_sym2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    (mean + radius, mean - radius)
}

/// Eigen-decomposition of a symmetric 3×3 matrix, eigenvalues sorted descending.
/// Column `k` of the returned matrix is the unit eigenvector of eigenvalue `k`.
pub fn eigen_sym3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mat = Matrix3::from_fn(|i, j| m[i][j]);
    let eig = SymmetricEigen::new(mat);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut values = [0.0; 3];
    let mut vectors = [[0.0; 3]; 3];
    for (k, &src) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[src];
        for row in 0..3 {
            vectors[row][k] = eig.eigenvectors[(row, src)];
        }
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_system() {
        let a = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = solve_least_squares(&a, 3, 3, &[1.0, 2.0, 3.0]).unwrap();
        for (xi, e) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((xi - e).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_of_two_points() {
        let x = solve_least_squares(&[1.0, 1.0], 2, 1, &[0.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn planted_solution_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, p) = (20, 5);
        let a: Vec<f64> = (0..k * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x_true: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..k)
            .map(|i| (0..p).map(|j| a[i * p + j] * x_true[j]).sum())
            .collect();
        let x = solve_least_squares(&a, k, p, &b).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-10, "{xi} vs {ti}");
        }
    }

    #[test]
    fn residual_orthogonal_to_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, p) = (30, 4);
        let a: Vec<f64> = (0..k * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_least_squares(&a, k, p, &b).unwrap();
        let resid: Vec<f64> = (0..k)
            .map(|i| (0..p).map(|j| a[i * p + j] * x[j]).sum::<f64>() - b[i])
            .collect();
        let at = |v: &[f64], j: usize| (0..k).map(|i| a[i * p + j] * v[i]).sum::<f64>();
        let atb_inf = (0..p).map(|j| at(&b, j).abs()).fold(0.0, f64::max);
        let atr_inf = (0..p).map(|j| at(&resid, j).abs()).fold(0.0, f64::max);
        assert!(atr_inf < 1e-8 * atb_inf);
    }

    #[test]
    fn rank_deficient_detected() {
        // second column is twice the first
        let a = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        assert!(matches!(
            solve_least_squares(&a, 3, 2, &[1.0, 2.0, 3.0]),
            Err(LinalgError::RankDeficient { .. })
        ));
        assert!(matches!(
            solve_least_squares(&[0.0; 4], 2, 2, &[1.0, 1.0]),
            Err(LinalgError::RankDeficient { .. })
        ));
        assert!(matches!(
            solve_least_squares(&[1.0, 2.0], 1, 2, &[1.0]),
            Err(LinalgError::Underdetermined { .. })
        ));
    }

    #[test]
    fn eigen_sym2_examples() {
        assert_eq!(eigen_sym2(1.0, 0.0, 1.0), (1.0, 1.0));
        assert_eq!(eigen_sym2(1.0, 0.0, -1.0), (1.0, -1.0));
        assert_eq!(eigen_sym2(0.0, 1.0, 0.0), (1.0, -1.0));
    }

    #[test]
    fn eigen_sym3_sorted_and_orthonormal() {
        let (vals, vecs) = eigen_sym3([[4.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|r| vecs[r][a] * vecs[r][b]).sum();
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn eigen_sym2_trace_and_determinant(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3) {
            let (l1, l2) = eigen_sym2(a, b, c);
            prop_assert!(l1 >= l2);
            let scale = a.abs().max(b.abs()).max(c.abs()).max(1.0);
            prop_assert!(((l1 + l2) - (a + c)).abs() <= 1e-12 * scale);
            prop_assert!((l1 * l2 - (a * c - b * b)).abs() <= 1e-12 * scale * scale);
        }

        #[test]
        fn consistent_systems_have_tiny_residual(seed in 0u64..500, k in 6usize..30, p in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..k * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_true: Vec<f64> = (0..p).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..k).map(|i| (0..p).map(|j| a[i * p + j] * x_true[j]).sum()).collect();
            let x = solve_least_squares(&a, k, p, &b).unwrap();
            let r2: f64 = (0..k)
                .map(|i| {
                    let r = (0..p).map(|j| a[i * p + j] * x[j]).sum::<f64>() - b[i];
                    r * r
                })
                .sum();
            let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(r2.sqrt() < 1e-9 * bn.max(1e-300));
        }
    }
}
