//! Open-system models: quadratic Hamiltonian, linear drive, drift and diffusion.
//!
//! The drift splits as A = Ω·H_s + A_irr, the first term generating the
//! unitary part of the evolution and A_irr the dissipative part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::omega_for_dim;
use crate::linalg::{self, Mat, Vector};

/// Piecewise-constant drive b(t). Segment i holds from `starts[i]` up to the
/// next start; the first segment also covers every earlier time.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSchedule {
    starts: Vec<f64>,
    values: Vec<Vector>,
}

impl DriveSchedule {
    pub fn constant(b: Vector) -> Self {
        Self {
            starts: vec![0.0],
            values: vec![b],
        }
    }

    pub fn piecewise(segments: Vec<(f64, Vector)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("drive schedule needs at least one segment"));
        }
        let dim = segments[0].1.len();
        let mut starts = Vec::with_capacity(segments.len());
        let mut values = Vec::with_capacity(segments.len());
        for (t, v) in segments {
            if v.len() != dim {
                return Err(Error::invalid("drive segments have different lengths"));
            }
            if let Some(&prev) = starts.last() {
                if !(t > prev) {
                    return Err(Error::invalid("drive segment starts must increase"));
                }
            }
            starts.push(t);
            values.push(v);
        }
        Ok(Self { starts, values })
    }

    pub fn at(&self, t: f64) -> &Vector {
        let idx = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        &self.values[idx]
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }
}

/// Ĥ = ½ x̂ᵀ H_s x̂ + bᵀ Ω x̂.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticHamiltonian {
    h_matrix: Mat,
    drive: DriveSchedule,
}

impl QuadraticHamiltonian {
    pub fn new(h_matrix: Mat, drive: DriveSchedule) -> Result<Self> {
        linalg::ensure_square(&h_matrix, "Hamiltonian matrix")?;
        let dim = h_matrix.nrows();
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::invalid("Hamiltonian dimension must be even"));
        }
        if drive.dim() != dim {
            return Err(Error::invalid("drive length does not match Hamiltonian"));
        }
        if (&h_matrix - h_matrix.transpose()).abs().max() > 1e-12 * (1.0 + h_matrix.abs().max())
        {
            return Err(Error::invalid("Hamiltonian matrix must be symmetric"));
        }
        Ok(Self {
            h_matrix: linalg::symmetrize(&h_matrix),
            drive,
        })
    }

    pub fn h_matrix(&self) -> &Mat {
        &self.h_matrix
    }

    pub fn drive(&self) -> &DriveSchedule {
        &self.drive
    }
}

/// Which built-in system a model came from; carried into run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Quench {
        omega: f64,
        gamma: f64,
        n_th: f64,
        drive_amplitude: f64,
        drive_phase: f64,
    },
    Opo {
        kappa: f64,
        gamma: f64,
        n_th: f64,
    },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenModel {
    kind: ModelKind,
    ham: QuadraticHamiltonian,
    drift: Mat,
    drift_irr: Mat,
    diffusion: Mat,
    coupling_rate: f64,
    bath_occupation: f64,
}

impl OpenModel {
    /// General constructor. A_irr is derived from A and H_s.
    pub fn new(
        ham: QuadraticHamiltonian,
        drift: Mat,
        diffusion: Mat,
        coupling_rate: f64,
        bath_occupation: f64,
    ) -> Result<Self> {
        linalg::ensure_same_shape(&drift, ham.h_matrix(), "drift vs Hamiltonian")?;
        linalg::ensure_same_shape(&diffusion, &drift, "diffusion vs drift")?;
        if (&diffusion - diffusion.transpose()).abs().max() > 1e-12 * (1.0 + diffusion.abs().max())
        {
            return Err(Error::invalid("diffusion matrix must be symmetric"));
        }
        let diffusion = linalg::symmetrize(&diffusion);
        if linalg::sym_eigenvalues(&diffusion)[0] < -1e-12 {
            return Err(Error::invalid("diffusion matrix must be positive semidefinite"));
        }
        if !(coupling_rate >= 0.0) || !(bath_occupation >= 0.0) {
            return Err(Error::invalid("coupling rate and bath occupation must be ≥ 0"));
        }
        let drift_irr = decompose_drift(&drift, ham.h_matrix())?;
        Ok(Self {
            kind: ModelKind::Custom,
            ham,
            drift,
            drift_irr,
            diffusion,
            coupling_rate,
            bath_occupation,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn hamiltonian(&self) -> &QuadraticHamiltonian {
        &self.ham
    }

    pub fn drift(&self) -> &Mat {
        &self.drift
    }

    pub fn drift_irr(&self) -> &Mat {
        &self.drift_irr
    }

    pub fn diffusion(&self) -> &Mat {
        &self.diffusion
    }

    pub fn coupling_rate(&self) -> f64 {
        self.coupling_rate
    }

    pub fn bath_occupation(&self) -> f64 {
        self.bath_occupation
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn modes(&self) -> usize {
        self.dim() / 2
    }

    pub fn drive_at(&self, t: f64) -> &Vector {
        self.ham.drive().at(t)
    }

    /// Unconditional stability: every eigenvalue of A has negative real part.
    pub fn is_stable(&self) -> bool {
        linalg::spectral_abscissa(&self.drift) < 0.0
    }

    pub fn spectral_abscissa(&self) -> f64 {
        linalg::spectral_abscissa(&self.drift)
    }

    /// x̄_ss = −A⁻¹ b for the drive at time `t`.
    pub fn steady_mean(&self, t: f64) -> Result<Vector> {
        let lu = self.drift.clone().lu();
        let sol = lu
            .solve(self.drive_at(t))
            .ok_or_else(|| Error::domain("drift matrix is singular"))?;
        Ok(-sol)
    }
}

/// A_irr = A − Ω·H_s.
pub fn decompose_drift(drift: &Mat, h_matrix: &Mat) -> Result<Mat> {
    linalg::ensure_square(drift, "drift")?;
    linalg::ensure_same_shape(drift, h_matrix, "drift vs Hamiltonian")?;
    if drift.nrows() == 0 || drift.nrows() % 2 != 0 {
        return Err(Error::invalid("drift dimension must be even"));
    }
    let omega = omega_for_dim(drift.nrows());
    Ok(drift - omega * h_matrix)
}

fn require_positive(value: f64, name: &str) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::invalid(format!("{name} must be positive and finite, got {value}")));
    }
    Ok(())
}

fn require_non_negative(value: f64, name: &str) -> Result<()> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::invalid(format!("{name} must be non-negative and finite, got {value}")));
    }
    Ok(())
}

fn thermal_diffusion(gamma: f64, n_th: f64) -> Mat {
    Mat::identity(2, 2) * (gamma * (n_th + 0.5))
}

/// Driven harmonic oscillator of frequency ω in contact with a thermal bath
/// through an excitation-exchange coupling of rate γ.
///
/// A = [[−γ/2, ω], [−ω, −γ/2]], D = γ(n̄+½)·I and the drive
/// b = −(√2·E·cos θ, √2·E·sin θ) corresponding to iE(â e^{iθ} − â† e^{−iθ}).
pub fn build_quench_model(
    omega: f64,
    gamma: f64,
    n_th: f64,
    drive_amplitude: f64,
    drive_phase: f64,
) -> Result<OpenModel> {
    require_positive(omega, "omega")?;
    require_positive(gamma, "gamma")?;
    require_non_negative(n_th, "n_th")?;
    require_non_negative(drive_amplitude, "drive amplitude")?;
    if !drive_phase.is_finite() {
        return Err(Error::invalid("drive phase must be finite"));
    }
    let h = Mat::identity(2, 2) * omega;
    let amp = std::f64::consts::SQRT_2 * drive_amplitude;
    let b = Vector::from_vec(vec![-amp * drive_phase.cos(), -amp * drive_phase.sin()]);
    let ham = QuadraticHamiltonian::new(h, DriveSchedule::constant(b))?;
    let drift = Mat::from_row_slice(2, 2, &[-gamma / 2.0, omega, -omega, -gamma / 2.0]);
    let mut model = OpenModel::new(ham, drift, thermal_diffusion(gamma, n_th), gamma, n_th)?;
    model.kind = ModelKind::Quench {
        omega,
        gamma,
        n_th,
        drive_amplitude,
        drive_phase,
    };
    Ok(model)
}

/// Degenerate parametric oscillator with squeezing rate κ, H_s = [[0, −κ], [−κ, 0]].
///
/// Unconditionally stable only for γ > 2κ; the model is still built otherwise
/// and [`OpenModel::is_stable`] reports the instability.
pub fn build_opo_model(kappa: f64, gamma: f64, n_th: f64) -> Result<OpenModel> {
    require_positive(kappa, "kappa")?;
    require_positive(gamma, "gamma")?;
    require_non_negative(n_th, "n_th")?;
    let h = Mat::from_row_slice(2, 2, &[0.0, -kappa, -kappa, 0.0]);
    let ham = QuadraticHamiltonian::new(h, DriveSchedule::constant(Vector::zeros(2)))?;
    let drift = Mat::from_row_slice(2, 2, &[-kappa - gamma / 2.0, 0.0, 0.0, kappa - gamma / 2.0]);
    let mut model = OpenModel::new(ham, drift, thermal_diffusion(gamma, n_th), gamma, n_th)?;
    model.kind = ModelKind::Opo { kappa, gamma, n_th };
    Ok(model)
}
