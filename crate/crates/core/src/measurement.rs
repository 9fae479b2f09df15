//! General-dyne monitoring of the bath output and the matrices it induces.
//!
//! The system couples to a bath mode through an excitation-exchange
//! interaction; the output mode is then projected on a Gaussian state of
//! covariance σ_m. The conditional dynamics only sees the two matrices C and Γ,
//! through the back-action χ(σ) = (σCᵀ + Γᵀ)(Cσ + Γ).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::omega_for_dim;
use crate::linalg::{self, Mat, Vector};

/// Regularisation of the homodyne limits: s = 0 is realised as s = ε and
/// s = ∞ as s = 1/ε.
pub const HOMODYNE_EPS: f64 = 1e-6;

/// The general-dyne parameter s, including its two homodyne limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DyneScale {
    /// s → 0: homodyne of the output x-quadrature, i.e. the system p-quadrature.
    Zero,
    /// s → ∞: homodyne of the output p-quadrature, i.e. the system x-quadrature.
    Infinite,
    Finite(f64),
}

impl DyneScale {
    pub fn value(self, eps: f64) -> f64 {
        match self {
            DyneScale::Zero => eps,
            DyneScale::Infinite => 1.0 / eps,
            DyneScale::Finite(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralDyne {
    pub scale: DyneScale,
    /// Rotation angle of the projected state (radians).
    pub angle: f64,
    pub efficiency: f64,
    pub excess_noise: f64,
}

impl GeneralDyne {
    pub fn new(scale: DyneScale, angle: f64, efficiency: f64, excess_noise: f64) -> Result<Self> {
        let gd = Self {
            scale,
            angle,
            efficiency,
            excess_noise,
        };
        gd.validate()?;
        Ok(gd)
    }

    pub fn homodyne_x() -> Self {
        Self::ideal(DyneScale::Infinite)
    }

    pub fn homodyne_p() -> Self {
        Self::ideal(DyneScale::Zero)
    }

    pub fn heterodyne() -> Self {
        Self::ideal(DyneScale::Finite(1.0))
    }

    fn ideal(scale: DyneScale) -> Self {
        Self {
            scale,
            angle: 0.0,
            efficiency: 1.0,
            excess_noise: 0.0,
        }
    }

    pub fn with_efficiency(mut self, efficiency: f64) -> Result<Self> {
        self.efficiency = efficiency;
        self.validate()?;
        Ok(self)
    }

    pub fn with_excess_noise(mut self, excess_noise: f64) -> Result<Self> {
        self.excess_noise = excess_noise;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if let DyneScale::Finite(s) = self.scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::validation(
                    "s",
                    format!("general-dyne parameter must satisfy s > 0 (finite), got {s}"),
                ));
            }
        }
        if !self.angle.is_finite() {
            return Err(Error::validation("angle", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::validation(
                "efficiency",
                format!("must lie in [0, 1], got {}", self.efficiency),
            ));
        }
        if !(self.excess_noise >= 0.0) || !self.excess_noise.is_finite() {
            return Err(Error::validation(
                "excess_noise",
                format!("must be ≥ 0 and finite, got {}", self.excess_noise),
            ));
        }
        Ok(())
    }

    pub fn is_unmonitored(&self) -> bool {
        self.efficiency == 0.0
    }
}

/// The bath mode the system exchanges excitations with.
#[derive(Debug, Clone, PartialEq)]
pub struct BathSpec {
    /// σ_B, 2ℓ×2ℓ
    pub cov: Mat,
    /// System–bath coupling, 2n×2ℓ (√γ·I for a single mode).
    pub coupling: Mat,
}

impl BathSpec {
    /// Thermal single-mode bath σ_B = (n̄+½)·I coupled with √γ·I.
    pub fn thermal(gamma: f64, n_th: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !(n_th >= 0.0) {
            return Err(Error::invalid("bath rate and occupation must be ≥ 0"));
        }
        Ok(Self {
            cov: Mat::identity(2, 2) * (n_th + 0.5),
            coupling: Mat::identity(2, 2) * gamma.sqrt(),
        })
    }

    pub fn for_model(model: &crate::model::OpenModel) -> Result<Self> {
        Self::thermal(model.coupling_rate(), model.bath_occupation())
    }
}

/// C and Γ, both 2ℓ×2n.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoringMatrices {
    pub c_matrix: Mat,
    pub gamma_matrix: Mat,
}

impl MonitoringMatrices {
    pub fn new(c_matrix: Mat, gamma_matrix: Mat) -> Result<Self> {
        linalg::ensure_same_shape(&c_matrix, &gamma_matrix, "C vs Γ")?;
        Ok(Self {
            c_matrix,
            gamma_matrix,
        })
    }

    /// C = Γ = 0: the record carries no information.
    pub fn unmonitored(modes: usize) -> Self {
        Self {
            c_matrix: Mat::zeros(2, 2 * modes),
            gamma_matrix: Mat::zeros(2, 2 * modes),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.c_matrix.iter().all(|&x| x == 0.0) && self.gamma_matrix.iter().all(|&x| x == 0.0)
    }

    pub fn outputs(&self) -> usize {
        self.c_matrix.nrows()
    }

    pub fn system_dim(&self) -> usize {
        self.c_matrix.ncols()
    }

    /// Noise gain σCᵀ + Γᵀ (2n×2ℓ) of the conditional mean.
    pub fn gain(&self, cov: &Mat) -> Result<Mat> {
        if cov.nrows() != self.system_dim() || cov.ncols() != self.system_dim() {
            return Err(Error::invalid(format!(
                "covariance is {}x{} but monitoring matrices act on dimension {}",
                cov.nrows(),
                cov.ncols(),
                self.system_dim()
            )));
        }
        Ok(cov * self.c_matrix.transpose() + self.gamma_matrix.transpose())
    }
}

fn rotation(angle: f64) -> Mat {
    let (s, c) = angle.sin_cos();
    Mat::from_row_slice(2, 2, &[c, s, -s, c])
}

/// σ_m with the default homodyne regularisation.
pub fn measurement_cm(gd: &GeneralDyne) -> Result<Mat> {
    measurement_cm_with_eps(gd, HOMODYNE_EPS)
}

/// 2σ_m = R[α]ᵀ diag(s/η, 1/(sη)) R[α] + ((1−η)/η + Δ)·I.
pub fn measurement_cm_with_eps(gd: &GeneralDyne, eps: f64) -> Result<Mat> {
    gd.validate()?;
    if gd.is_unmonitored() {
        return Err(Error::UnmonitoredLimit);
    }
    let s = gd.scale.value(eps);
    let eta = gd.efficiency;
    let r = rotation(gd.angle);
    let core = Mat::from_diagonal(&Vector::from_vec(vec![s / eta, 1.0 / (s * eta)]));
    let added = (1.0 - eta) / eta + gd.excess_noise;
    let two_sigma = r.transpose() * core * &r + Mat::identity(2, 2) * added;
    Ok(linalg::symmetrize(&(two_sigma * 0.5)))
}

/// C and Γ for the excitation-exchange coupling.
///
/// With covariances expressed in shot-noise units (σ̃ = 2σ, vacuum = I):
///
///   Γᵀ = (1/√2)·Ω·G·σ̃_B·(σ̃_B + σ̃_m)^{−1/2},   Cᵀ = −√2·G·Ω·(σ̃_B + σ̃_m)^{−1/2}.
///
/// In these units σCᵀ + Γᵀ vanishes for σ = σ_B: a system in equilibrium with
/// the bath is uncorrelated with the output and the record carries no
/// information about it.
pub fn monitoring_matrices(bath: &BathSpec, sigma_m: &Mat) -> Result<MonitoringMatrices> {
    linalg::ensure_square(&bath.cov, "bath covariance")?;
    linalg::ensure_same_shape(&bath.cov, sigma_m, "bath vs measurement covariance")?;
    let out_dim = bath.cov.nrows();
    if bath.coupling.ncols() != out_dim || bath.coupling.nrows() % 2 != 0 {
        return Err(Error::invalid("coupling must be 2n×2ℓ"));
    }
    let sys_dim = bath.coupling.nrows();
    let total = (&bath.cov + sigma_m) * 2.0;
    let inv_sqrt = linalg::inv_sqrt_spd(&total)
        .map_err(|_| Error::domain("σ_B + σ_m is singular"))?;
    let omega_sys = omega_for_dim(sys_dim);
    let omega_out = omega_for_dim(out_dim);
    let sqrt2 = std::f64::consts::SQRT_2;
    let gamma_t = omega_sys * &bath.coupling * (&bath.cov * 2.0) * &inv_sqrt / sqrt2;
    let c_t = -(&bath.coupling * omega_out * &inv_sqrt) * sqrt2;
    MonitoringMatrices::new(c_t.transpose(), gamma_t.transpose())
}

/// Monitoring matrices for a general-dyne detector, mapping η = 0 to C = Γ = 0.
pub fn monitoring_for(bath: &BathSpec, gd: &GeneralDyne) -> Result<MonitoringMatrices> {
    monitoring_for_with_eps(bath, gd, HOMODYNE_EPS)
}

pub fn monitoring_for_with_eps(bath: &BathSpec, gd: &GeneralDyne, eps: f64) -> Result<MonitoringMatrices> {
    match measurement_cm_with_eps(gd, eps) {
        Ok(sigma_m) => monitoring_matrices(bath, &sigma_m),
        Err(Error::UnmonitoredLimit) => Ok(MonitoringMatrices::unmonitored(bath.coupling.nrows() / 2)),
        Err(e) => Err(e),
    }
}

/// χ(σ) = (σCᵀ + Γᵀ)(Cσ + Γ), symmetric PSD.
pub fn backaction(cov: &Mat, mm: &MonitoringMatrices) -> Result<Mat> {
    linalg::ensure_square(cov, "covariance")?;
    let g = mm.gain(cov)?;
    Ok(linalg::symmetrize(&(&g * g.transpose())))
}
