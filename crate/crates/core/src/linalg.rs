//! Small dense linear-algebra helpers shared by the filter, the privacy
//! calculus and the SDP solver.
//!
//! Everything here works on `nalgebra` dynamic matrices. The problem sizes in
//! this crate are tiny (state dimension times sensor count stays well below
//! 100), so eigendecompositions are used freely where a cheaper factorization
//! would also do.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Largest condition number accepted when inverting a symmetric positive
/// definite matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance on the smallest eigenvalue for a matrix to count as PSD,
/// relative to `max(1, |largest eigenvalue|)`.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix `{name}` is singular or ill-conditioned (condition number {condition:.3e})")]
    Singular { name: &'static str, condition: f64 },
    #[error("matrix `{name}` is not positive semidefinite (minimum eigenvalue {min_eigenvalue:.3e})")]
    NotPsd {
        name: &'static str,
        min_eigenvalue: f64,
    },
    #[error("matrix `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues (ascending) and matching eigenvectors of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.max()
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

/// Numerical rank: singular values above `rel_tol * sigma_max` count.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// `true` when `m` is PSD up to [`PSD_TOLERANCE`] (scaled by its spectrum).
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let (values, _) = sym_eigen(m);
    if values.is_empty() {
        return true;
    }
    let scale = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    values[0] >= -PSD_TOLERANCE * scale
}

/// `true` when `lower ⪯ upper` in the PSD order, i.e. `λ_min(upper − lower) ≥ −tol`.
pub fn psd_le(lower: &DMatrix<f64>, upper: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(&(upper - lower)) >= -tol
}

/// Inverse of a symmetric positive definite matrix through a Cholesky
/// factorization, refusing matrices whose condition number exceeds
/// [`MAX_CONDITION`].
pub fn spd_inverse(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::Shape {
            name,
            expected: (m.nrows(), m.nrows()),
            found: m.shape(),
        });
    }
    let sym = symmetrize(m);
    let condition = condition_number(&sym);
    if !(condition <= MAX_CONDITION) {
        return Err(LinalgError::Singular { name, condition });
    }
    let chol = sym
        .cholesky()
        .ok_or(LinalgError::Singular { name, condition })?;
    Ok(symmetrize(&chol.inverse()))
}

/// Spectral condition number of a symmetric matrix; infinite when it is not
/// positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen(m);
    if values.is_empty() {
        return 1.0;
    }
    let lo = values[0];
    let hi = values[values.len() - 1];
    if lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Symmetric square-root style factor `L` with `L Lᵀ = m` for a PSD `m`
/// (eigenvalues below zero within tolerance are clamped). Works for singular
/// matrices, which a Cholesky factorization would reject.
pub fn psd_factor(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::Shape {
            name,
            expected: (m.nrows(), m.nrows()),
            found: m.shape(),
        });
    }
    let (values, vectors) = sym_eigen(m);
    if values.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if values[0] < -PSD_TOLERANCE * scale || values.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NotPsd {
            name,
            min_eigenvalue: values[0],
        });
    }
    let mut factor = vectors;
    for (j, v) in values.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues are clamped to zero.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    if values.iter().all(|&v| v >= 0.0) {
        return symmetrize(m);
    }
    let clamped = DMatrix::from_diagonal(&values.map(|v| v.max(0.0)));
    symmetrize(&(&vectors * clamped * vectors.transpose()))
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacks matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn check_shape(
    m: &DMatrix<f64>,
    name: &'static str,
    expected: (usize, usize),
) -> Result<(), LinalgError> {
    if m.shape() == expected {
        Ok(())
    } else {
        Err(LinalgError::Shape {
            name,
            expected,
            found: m.shape(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let (vals, vecs) = sym_eigen(&m);
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        let back = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn rank_of_zero_and_outer_product() {
        assert_eq!(rank(&DMatrix::zeros(4, 2), 1e-9), 0);
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(rank(&(&u * u.transpose()), 1e-9), 1);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match spd_inverse(&m, "F") {
            Err(LinalgError::Singular { name, .. }) => assert_eq!(name, "F"),
            other => panic!("expected singular error, got {other:?}"),
        }
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-13]));
        assert!(spd_inverse(&m, "F").is_err());
    }

    #[test]
    fn spd_inverse_matches_lu() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let inv = spd_inverse(&m, "m").unwrap();
        assert!((inv - m.try_inverse().unwrap()).norm() < 1e-14);
    }

    #[test]
    fn factor_of_singular_psd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&m, "m").unwrap();
        assert!((&l * l.transpose() - m).norm() < 1e-12);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(
            psd_factor(&neg, "neg"),
            Err(LinalgError::NotPsd { .. })
        ));
    }

    #[test]
    fn block_diag_and_vstack_layout() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(2, 2, 3.0);
        let d = block_diag(&[a.clone(), b.clone()]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(2, 2)], 3.0);
        let s = vstack(&[&b, &b]);
        assert_eq!(s.shape(), (4, 2));
    }
}
