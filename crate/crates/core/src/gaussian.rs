//! Gaussian states in phase space.
//!
//! Conventions: ħ = 1, quadratures ordered (q₁, p₁, …, qₙ, pₙ) with [q, p] = i,
//! and covariance σᵢⱼ = ⟨{x̂ᵢ, x̂ⱼ}⟩/2 − ⟨x̂ᵢ⟩⟨x̂ⱼ⟩, so the vacuum is I/2.

use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Tolerance on symplectic eigenvalues when deciding physicality.
pub const PHYSICALITY_TOL: f64 = 1e-8;

/// The n-mode symplectic form Ω = ⊕ⱼ [[0, 1], [−1, 0]].
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    modes: usize,
    matrix: Mat,
}

impl SymplecticForm {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::invalid("symplectic form needs at least one mode"));
        }
        let dim = 2 * modes;
        let mut matrix = Mat::zeros(dim, dim);
        for j in 0..modes {
            matrix[(2 * j, 2 * j + 1)] = 1.0;
            matrix[(2 * j + 1, 2 * j)] = -1.0;
        }
        Ok(Self { modes, matrix })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat {
        self.matrix
    }
}

/// Ω for `modes` modes as a plain matrix.
pub fn symplectic_form(modes: usize) -> Result<SymplecticForm> {
    SymplecticForm::new(modes)
}

/// Ω for a 2n-dimensional phase space. Panics on odd dimension; callers have
/// already validated shapes.
pub(crate) fn omega_for_dim(dim: usize) -> Mat {
    debug_assert!(dim % 2 == 0 && dim > 0);
    SymplecticForm::new(dim / 2)
        .expect("dimension validated by caller")
        .into_matrix()
}

/// First and second moments of an n-mode Gaussian state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: Vector,
    cov: Mat,
}

impl GaussianState {
    /// Builds a state, symmetrizing `cov`. Shapes are checked; physicality is not
    /// (see [`GaussianState::is_physical`]).
    pub fn new(mean: Vector, cov: Mat) -> Result<Self> {
        linalg::ensure_square(&cov, "covariance")?;
        let dim = cov.nrows();
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "phase-space dimension must be even and positive, got {dim}"
            )));
        }
        if mean.len() != dim {
            return Err(Error::invalid(format!(
                "mean has length {} but covariance is {dim}x{dim}",
                mean.len()
            )));
        }
        if !linalg::all_finite(&cov) || mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("state contains non-finite entries"));
        }
        Ok(Self {
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    /// Like [`GaussianState::new`] but also rejects unphysical covariances.
    pub fn physical(mean: Vector, cov: Mat) -> Result<Self> {
        let state = Self::new(mean, cov)?;
        if !state.is_physical(PHYSICALITY_TOL) {
            return Err(Error::domain(format!(
                "covariance violates the uncertainty principle (min symplectic eigenvalue {:.6e} < 1/2)",
                state.symplectic_eigenvalues().last().copied().unwrap_or(f64::NAN)
            )));
        }
        Ok(state)
    }

    pub fn vacuum(modes: usize) -> Result<Self> {
        Self::thermal(modes, 0.0)
    }

    /// Undisplaced thermal state σ = (n̄ + 1/2)·I.
    pub fn thermal(modes: usize, occupation: f64) -> Result<Self> {
        if modes == 0 {
            return Err(Error::invalid("state needs at least one mode"));
        }
        if !(occupation >= 0.0) {
            return Err(Error::invalid("thermal occupation must be non-negative"));
        }
        let dim = 2 * modes;
        Self::new(
            Vector::zeros(dim),
            Mat::identity(dim, dim) * (occupation + 0.5),
        )
    }

    /// Single-mode squeezed vacuum diag(e^{2r}, e^{−2r})/2.
    pub fn squeezed_vacuum(r: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::invalid("squeezing parameter must be finite"));
        }
        let cov = Mat::from_diagonal(&Vector::from_vec(vec![
            0.5 * (2.0 * r).exp(),
            0.5 * (-2.0 * r).exp(),
        ]));
        Self::new(Vector::zeros(2), cov)
    }

    pub fn with_mean(mut self, mean: Vector) -> Result<Self> {
        if mean.len() != self.mean.len() {
            return Err(Error::invalid("mean length does not match covariance"));
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Mat {
        &self.cov
    }

    pub fn modes(&self) -> usize {
        self.cov.nrows() / 2
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn symplectic_eigenvalues(&self) -> Vec<f64> {
        symplectic_eigenvalues(&self.cov)
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        is_physical_cov(&self.cov, tol)
    }

    pub fn purity(&self) -> Result<f64> {
        purity(&self.cov)
    }

    pub fn wigner_entropy(&self) -> Result<f64> {
        wigner_entropy(&self.cov)
    }
}

/// Additive constant of the Wigner entropy, n·ln(2πe): the differential entropy
/// normalisation of a 2n-dimensional Gaussian. Rates never depend on it.
pub fn entropy_constant(modes: usize) -> f64 {
    modes as f64 * (2.0 * PI * E).ln()
}

/// P = (det 2σ)^{-1/2}.
pub fn purity(cov: &Mat) -> Result<f64> {
    linalg::ensure_square(cov, "covariance")?;
    let dim = cov.nrows() as f64;
    let ln_det = linalg::ln_det_spd(cov)
        .map_err(|_| Error::domain("purity: det 2σ ≤ 0 (unphysical covariance)"))?;
    Ok((-0.5 * (dim * 2.0_f64.ln() + ln_det)).exp())
}

/// Wigner (Rényi-2) entropy S = ½ ln det σ + n·ln(2πe).
pub fn wigner_entropy(cov: &Mat) -> Result<f64> {
    linalg::ensure_square(cov, "covariance")?;
    let ln_det = linalg::ln_det_spd(cov)
        .map_err(|_| Error::domain("wigner entropy: covariance is not positive definite"))?;
    Ok(0.5 * ln_det + entropy_constant(cov.nrows() / 2))
}

/// Symplectic eigenvalues (moduli of the eigenvalues of iΩσ), one per mode,
/// sorted descending.
pub fn symplectic_eigenvalues(cov: &Mat) -> Vec<f64> {
    let dim = cov.nrows();
    if dim == 0 || dim % 2 != 0 || cov.ncols() != dim {
        return Vec::new();
    }
    if dim == 2 {
        // single mode: ν = √det σ
        let det = cov[(0, 0)] * cov[(1, 1)] - 0.25 * (cov[(0, 1)] + cov[(1, 0)]).powi(2);
        return vec![det.abs().sqrt()];
    }
    let omega = omega_for_dim(dim);
    let mut moduli: Vec<f64> = (&omega * linalg::symmetrize(cov))
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    // eigenvalues come in ±iν pairs
    moduli.into_iter().step_by(2).collect()
}

pub fn is_physical_cov(cov: &Mat, tol: f64) -> bool {
    if !linalg::all_finite(cov) {
        return false;
    }
    let positive = if cov.nrows() == 2 {
        cov[(0, 0)] > 0.0 && cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)] > 0.0
    } else {
        cov.nrows() > 0 && linalg::sym_eigenvalues(cov)[0] > 0.0
    };
    match symplectic_eigenvalues(cov).last() {
        Some(&nu_min) => positive && nu_min >= 0.5 - tol,
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_vec(v.to_vec()))
    }

    #[test]
    fn single_mode_form() {
        let w = symplectic_form(1).unwrap();
        assert_eq!(w.matrix(), &Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn two_mode_form_is_block_diagonal() {
        let w = symplectic_form(2).unwrap().into_matrix();
        let block = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(w.view((0, 0), (2, 2)), block);
        assert_eq!(w.view((2, 2), (2, 2)), block);
        assert_eq!(w.view((0, 2), (2, 2)), Mat::zeros(2, 2));
        assert_eq!(w.view((2, 0), (2, 2)), Mat::zeros(2, 2));
    }

    #[test]
    fn form_invariants() {
        for n in 1..=5 {
            let w = symplectic_form(n).unwrap().into_matrix();
            let id = Mat::identity(2 * n, 2 * n);
            assert_eq!(w.transpose(), -&w);
            assert_eq!(&w * &w, -&id);
            assert_eq!(&w * w.transpose(), id);
            assert!((w.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_modes_rejected() {
        assert!(matches!(symplectic_form(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vacuum_is_pure() {
        assert!((purity(&diag(&[0.5, 0.5])).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hot_thermal_purity() {
        // 2n̄+1 = 100 → det 2σ = 100²
        let s = GaussianState::thermal(1, 49.5).unwrap();
        assert!((s.purity().unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn purity_rejects_indefinite() {
        assert!(matches!(
            purity(&diag(&[0.5, -0.5])),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn vacuum_entropy() {
        let s = wigner_entropy(&diag(&[0.5, 0.5])).unwrap();
        assert!((s - (PI * E).ln()).abs() < 1e-14);
        assert!((s - 2.144_729_885_849_4).abs() < 1e-12);
    }

    #[test]
    fn entropy_shift_under_scaling() {
        let cov = Mat::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.7]);
        let c: f64 = 3.7;
        let ds = wigner_entropy(&(&cov * c)).unwrap() - wigner_entropy(&cov).unwrap();
        assert!((ds - c.ln()).abs() < 1e-13);
    }

    #[test]
    fn entropy_and_purity_agree() {
        let a = diag(&[0.25, 1000.5]);
        let b = Mat::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 0.9]);
        let ds = wigner_entropy(&a).unwrap() - wigner_entropy(&b).unwrap();
        let ratio = (purity(&b).unwrap() / purity(&a).unwrap()).ln();
        assert!((ds - ratio).abs() < 1e-12);
        // S = −ln P + n ln(πe) for a single mode
        let s = wigner_entropy(&a).unwrap();
        let p = purity(&a).unwrap();
        assert!((p - (-(s - (PI * E).ln())).exp()).abs() < 1e-12);
    }

    #[test]
    fn entropy_monotone_in_occupation() {
        let grid = [0.0, 0.5, 1.0, 10.0, 49.5];
        let s: Vec<f64> = grid
            .iter()
            .map(|&n| GaussianState::thermal(1, n).unwrap().wigner_entropy().unwrap())
            .collect();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn classical_limit_log_identity() {
        // σ = ν·I: ½ ln det σ = Σ ln νᵢ over modes
        let nu = [350.0, 1200.0];
        let cov = diag(&[nu[0], nu[0], nu[1], nu[1]]);
        let half_ln_det = 0.5 * linalg::ln_det_spd(&cov).unwrap();
        let sum_ln: f64 = symplectic_eigenvalues(&cov).iter().map(|v| v.ln()).sum();
        assert!((half_ln_det - sum_ln).abs() < 1e-12);
        assert!((half_ln_det - nu.iter().map(|v| v.ln()).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn symplectic_spectrum_examples() {
        let v = symplectic_eigenvalues(&diag(&[0.5, 0.5]));
        assert_eq!(v.len(), 1);
        assert!((v[0] - 0.5).abs() < 1e-14);

        let v = symplectic_eigenvalues(&diag(&[7.5, 7.5]));
        assert!((v[0] - 7.5).abs() < 1e-12);

        let r: f64 = 1.3;
        let v = symplectic_eigenvalues(&diag(&[0.5 * (2.0 * r).exp(), 0.5 * (-2.0 * r).exp()]));
        assert!((v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symplectic_spectrum_two_modes_sorted() {
        let v = symplectic_eigenvalues(&diag(&[0.5, 0.5, 3.0, 3.0]));
        assert_eq!(v.len(), 2);
        assert!((v[0] - 3.0).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn physicality() {
        assert!(GaussianState::vacuum(1).unwrap().is_physical(PHYSICALITY_TOL));
        assert!(!is_physical_cov(&diag(&[0.4, 0.4]), PHYSICALITY_TOL));
        assert!(GaussianState::physical(Vector::zeros(2), diag(&[0.3, 0.3])).is_err());
    }

    #[test]
    fn purity_one_iff_pure() {
        let sq = GaussianState::squeezed_vacuum(0.8).unwrap();
        assert!((sq.purity().unwrap() - 1.0).abs() < 1e-12);
        let th = GaussianState::thermal(1, 0.1).unwrap();
        assert!(th.purity().unwrap() < 1.0 - 1e-3);
    }

    #[test]
    fn state_shape_checks() {
        assert!(GaussianState::new(Vector::zeros(3), Mat::identity(3, 3)).is_err());
        assert!(GaussianState::new(Vector::zeros(4), Mat::identity(2, 2)).is_err());
        let asym = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        let s = GaussianState::new(Vector::zeros(2), asym).unwrap();
        assert_eq!(s.cov()[(0, 1)], s.cov()[(1, 0)]);
    }
}
