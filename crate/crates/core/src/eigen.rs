//! Cyclic Jacobi eigenvalue iteration for small dense symmetric matrices.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::matrix::DenseMatrix;

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Tolerance used when callers have no better scale: `1e-14 · ‖h‖_F`.
pub fn default_tol(h: &DenseMatrix) -> f64 {
    (1e-14 * h.frobenius()).max(f64::MIN_POSITIVE)
}

/// All eigenvalues of a symmetric matrix, ascending.
///
/// Sweeps rotate every off-diagonal pair until the off-diagonal Frobenius
/// norm is at most `tol`.
pub fn eigenvalues_sym(h: &DenseMatrix, tol: f64) -> Result<Vec<f64>> {
    if !h.is_square() {
        return Err(shape_err!("eigenvalues of a non-square {}x{} matrix", h.rows(), h.cols()));
    }
    let n = h.rows();
    let scale = h.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            if (h[(i, j)] - h[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(shape_err!(
                    "matrix is not symmetric: ({i},{j}) = {} vs {}",
                    h[(i, j)],
                    h[(j, i)]
                ));
            }
        }
    }
    h.ensure_finite()?;

    let mut a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(Error::Numerical(alloc::format!(
            "Jacobi iteration did not reach off-diagonal norm {tol:e} in {MAX_SWEEPS} sweeps"
        )));
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigen_sym(h: &DenseMatrix, tol: f64) -> Result<f64> {
    let eig = eigenvalues_sym(h, tol)?;
    eig.first()
        .copied()
        .ok_or_else(|| Error::Parameter("empty matrix has no eigenvalues".into()))
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    math::sqrt(s)
}

/// Annihilates `a[p][q]` with one plane rotation `Jᵀ A J`.
fn rotate(a: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    if apq.abs() <= 1e-3 * f64::EPSILON * (app.abs() + aqq.abs()) {
        a[(p, q)] = 0.0;
        a[(q, p)] = 0.0;
        return;
    }
    let theta = (aqq - app) / (2.0 * apq);
    // t = tan of the rotation angle, the smaller root of t² + 2θt − 1 = 0
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + math::hypot(theta, 1.0))
    };
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / math::hypot(t, 1.0);
    let s = t * c;

    let n = a.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { 0.0 })
    }

    #[test]
    fn diagonal_matrix() {
        assert_eq!(min_eigen_sym(&diag(&[3.0, 1.0, 2.0]), 1e-12).unwrap(), 1.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let h = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let eig = eigenvalues_sym(&h, 1e-14).unwrap();
        assert!((eig[0] - 1.0).abs() < 1e-14);
        assert!((eig[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn gram_matches_reference_eigensolver() {
        let mut rng = SeededRng::new(2024);
        for _ in 0..5 {
            let g = rng.gaussian_matrix(6, 6, 1.0).unwrap();
            let h = g.matmul_transposed(&g).unwrap();
            let ours = eigenvalues_sym(&h, default_tol(&h)).unwrap();
            let reference = nalgebra::DMatrix::from_row_slice(6, 6, h.data()).symmetric_eigen();
            let mut theirs: std::vec::Vec<f64> = reference.eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(min_eigen_sym(&DenseMatrix::zeros(2, 3), 1e-12), Err(Error::Shape(_))));
        let asym = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(min_eigen_sym(&asym, 1e-12), Err(Error::Shape(_))));
    }

    #[test]
    fn impossible_tolerance_reports_non_convergence() {
        let h = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert!(matches!(eigenvalues_sym(&h, -1.0), Err(Error::Numerical(_))));
    }

    proptest! {
        #[test]
        fn gram_is_psd(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9) {
            let g = SeededRng::new(seed).gaussian_matrix(rows, cols, 1.0).unwrap();
            let h = g.matmul_transposed(&g).unwrap();
            prop_assert!(min_eigen_sym(&h, default_tol(&h)).unwrap() >= -1e-10);
        }
    }
}
