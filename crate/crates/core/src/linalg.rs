//! Small dense helpers shared by the physics modules.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; the matrices involved are
//! 2n×2n with n the number of modes, so dense factorizations are always cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalue floor used by the symmetric (inverse) square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// (M + Mᵀ)/2
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn ensure_same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// ln det of a symmetric positive-definite matrix via Cholesky.
pub fn ln_det_spd(m: &Mat) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::domain("matrix is not positive definite"))?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        acc += l[(i, i)].ln();
    }
    Ok(2.0 * acc)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn inverse_spd(m: &Mat) -> Result<Mat> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::domain("matrix is not positive definite"))?;
    Ok(symmetrize(&chol.inverse()))
}

/// S^{-1/2} for symmetric positive-definite S, through the eigendecomposition.
pub fn inv_sqrt_spd(m: &Mat) -> Result<Mat> {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| !(l > EIGEN_FLOOR)) {
        return Err(Error::domain(
            "matrix is singular or indefinite, inverse square root undefined",
        ));
    }
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * Mat::from_diagonal(&d) * q.transpose())))
}

/// Symmetric eigenvalues, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Largest real part among the eigenvalues of a (generally non-symmetric) matrix.
pub fn spectral_abscissa(m: &Mat) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}
