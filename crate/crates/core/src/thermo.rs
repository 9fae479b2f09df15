//! Entropy rate, flux, production and the informational term.
//!
//! All rates use the Wigner entropy S = ½ ln det σ + const. For the
//! unconditional dynamics the rate splits as dS_uc/dt = Φ_uc + Π_uc with
//! Π_uc ≥ 0. Monitoring adds İ = Ṡ − Ṡ_uc to the production, Π = Π_uc + İ,
//! and its integral 𝓘 = ½ ln(det σ / det σ_uc) is minus the mutual information
//! between the phase-space variable and the filtered mean.

use crate::dynamics::{Ensemble, MomentSeries};
use crate::error::{Error, Result};
use crate::gaussian::wigner_entropy;
use crate::linalg::{self, Mat, Vector};
use crate::measurement::{backaction, MonitoringMatrices};
use crate::model::OpenModel;

/// Tolerance on V's eigenvalues before it is declared indefinite.
pub const NOISE_PSD_TOL: f64 = 1e-10;

fn trace_product(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

fn check_dims(model: &OpenModel, cov: &Mat, what: &str) -> Result<()> {
    if cov.nrows() != model.dim() || cov.ncols() != model.dim() {
        return Err(Error::invalid(format!(
            "{what} is {}x{}, model dimension is {}",
            cov.nrows(),
            cov.ncols(),
            model.dim()
        )));
    }
    Ok(())
}

/// dS/dt = ½ Tr[2A + σ⁻¹(D − χ)]. Pass χ = 0 and σ = σ_uc for the
/// unconditional rate.
pub fn entropy_rate(model: &OpenModel, cov: &Mat, chi: &Mat) -> Result<f64> {
    check_dims(model, cov, "covariance")?;
    check_dims(model, chi, "back-action")?;
    let inv = linalg::inverse_spd(cov).map_err(|_| Error::domain("entropy rate: σ is singular"))?;
    Ok(model.drift().trace() + 0.5 * trace_product(&inv, &(model.diffusion() - chi)))
}

/// M = A_irrᵀ D⁻¹ A_irr; errors on singular D.
fn irreversible_metric(model: &OpenModel) -> Result<Mat> {
    let d_inv = linalg::inverse_spd(model.diffusion())
        .map_err(|_| Error::domain("flux/production need a positive-definite diffusion matrix"))?;
    let a = model.drift_irr();
    Ok(a.transpose() * d_inv * a)
}

/// Unconditional entropy flux and production (Φ_uc, Π_uc):
///
///   Φ_uc = −Tr A_irr − 2 Tr[M σ_uc] − 2 x̄ᵀ M x̄
///   Π_uc = 2 Tr A_irr + 2 Tr[M σ_uc] + ½ Tr[σ_uc⁻¹ D] + 2 x̄ᵀ M x̄
///
/// with M = A_irrᵀ D⁻¹ A_irr.
pub fn flux_prod_uc(model: &OpenModel, cov_uc: &Mat, mean_uc: &Vector) -> Result<(f64, f64)> {
    check_dims(model, cov_uc, "unconditional covariance")?;
    if mean_uc.len() != model.dim() {
        return Err(Error::invalid("mean has the wrong length"));
    }
    let m = irreversible_metric(model)?;
    let inv = linalg::inverse_spd(cov_uc).map_err(|_| Error::domain("σ_uc is singular"))?;
    let tr_a = model.drift_irr().trace();
    let tr_ms = trace_product(&m, cov_uc);
    let quad = mean_uc.dot(&(&m * mean_uc));
    let flux = -tr_a - 2.0 * tr_ms - 2.0 * quad;
    let prod = 2.0 * tr_a + 2.0 * tr_ms + 0.5 * trace_product(&inv, model.diffusion()) + 2.0 * quad;
    Ok((flux, prod))
}

/// İ = ½ Tr[σ⁻¹(D − χ) − σ_uc⁻¹ D].
pub fn info_rate(model: &OpenModel, cov: &Mat, cov_uc: &Mat, chi: &Mat) -> Result<f64> {
    check_dims(model, cov, "covariance")?;
    check_dims(model, cov_uc, "unconditional covariance")?;
    check_dims(model, chi, "back-action")?;
    let inv = linalg::inverse_spd(cov).map_err(|_| Error::domain("σ is singular"))?;
    let inv_uc = linalg::inverse_spd(cov_uc).map_err(|_| Error::domain("σ_uc is singular"))?;
    let d = model.diffusion();
    Ok(0.5 * (trace_product(&inv, &(d - chi)) - trace_product(&inv_uc, d)))
}

/// 𝓘 = ln(P_uc/P) = ½ (ln det σ − ln det σ_uc).
pub fn info_integrated(cov: &Mat, cov_uc: &Mat) -> Result<f64> {
    linalg::ensure_same_shape(cov, cov_uc, "σ vs σ_uc")?;
    let a = linalg::ln_det_spd(cov).map_err(|_| Error::domain("σ is not positive definite"))?;
    let b = linalg::ln_det_spd(cov_uc).map_err(|_| Error::domain("σ_uc is not positive definite"))?;
    Ok(0.5 * (a - b))
}

/// I(X : X̄) = ½ Σ ln(1 + λᵢ), λ the eigenvalues of σ^{−1/2} V σ^{−1/2}.
pub fn mutual_information(cov: &Mat, noise_cov: &Mat) -> Result<f64> {
    linalg::ensure_square(cov, "σ")?;
    linalg::ensure_same_shape(cov, noise_cov, "σ vs V")?;
    let v = linalg::symmetrize(noise_cov);
    let scale = 1.0 + linalg::max_abs(&v);
    if linalg::sym_eigenvalues(&v)[0] < -NOISE_PSD_TOL * scale {
        return Err(Error::invalid("noise covariance V has a negative eigenvalue"));
    }
    let r = linalg::inv_sqrt_spd(cov).map_err(|_| Error::domain("σ is not positive definite"))?;
    let whitened = &r * v * &r;
    Ok(0.5
        * linalg::sym_eigenvalues(&whitened)
            .iter()
            .map(|&l| l.max(0.0).ln_1p())
            .sum::<f64>())
}

/// Per-trajectory stochastic flux and production rates (dφ/dt, dπ/dt) at the
/// conditional state (σ, x̄). Their sum is the entropy rate.
pub fn stochastic_flux_prod(model: &OpenModel, cov: &Mat, chi: &Mat, mean: &Vector) -> Result<(f64, f64)> {
    FluxKernel::new(model)?.rates(cov, chi, mean)
}

/// Precomputed pieces of the stochastic flux/production for one model.
#[derive(Debug, Clone)]
pub struct FluxKernel {
    metric: Mat,
    tr_a_irr: f64,
    diffusion: Mat,
}

impl FluxKernel {
    pub fn new(model: &OpenModel) -> Result<Self> {
        Ok(Self {
            metric: irreversible_metric(model)?,
            tr_a_irr: model.drift_irr().trace(),
            diffusion: model.diffusion().clone(),
        })
    }

    /// Deterministic parts at σ: (−Tr A_irr − 2Tr[Mσ], ½ Tr[σ⁻¹(D − χ)]).
    fn trace_parts(&self, cov: &Mat, chi: &Mat) -> Result<(f64, f64)> {
        let inv = linalg::inverse_spd(cov).map_err(|_| Error::domain("σ is singular"))?;
        Ok((
            -self.tr_a_irr - 2.0 * trace_product(&self.metric, cov),
            0.5 * trace_product(&inv, &(&self.diffusion - chi)),
        ))
    }

    fn quad(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += x[i] * self.metric[(i, j)] * x[j];
            }
        }
        acc
    }

    pub fn rates(&self, cov: &Mat, chi: &Mat, mean: &Vector) -> Result<(f64, f64)> {
        if mean.len() != self.metric.nrows() || cov.shape() != self.metric.shape() {
            return Err(Error::invalid("state dimension does not match model"));
        }
        let (flux_trace, rate_term) = self.trace_parts(cov, chi)?;
        let q = self.quad(mean.as_slice());
        let flux = flux_trace - 2.0 * q;
        // −flux_trace = Tr A_irr + 2Tr[Mσ]
        let prod = -flux_trace + self.tr_a_irr + 2.0 * q + rate_term;
        Ok((flux, prod))
    }
}

/// Time series of the entropic quantities on the recorded grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThermoLedger {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub entropy_uc: Vec<f64>,
    pub entropy_rate: Vec<f64>,
    pub entropy_rate_uc: Vec<f64>,
    pub flux_uc: Vec<f64>,
    pub prod_uc: Vec<f64>,
    pub info_rate: Vec<f64>,
    pub info: Vec<f64>,
    /// Π = Π_uc + İ
    pub prod: Vec<f64>,
}

impl ThermoLedger {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Evaluates the ledger along co-integrated moments.
pub fn build_ledger(model: &OpenModel, mm: &MonitoringMatrices, series: &MomentSeries) -> Result<ThermoLedger> {
    let n = series.times.len();
    let zero = Mat::zeros(model.dim(), model.dim());
    let mut ledger = ThermoLedger {
        times: series.times.clone(),
        ..Default::default()
    };
    for k in 0..n {
        let cov = &series.cov[k];
        let cov_uc = &series.cov_uc[k];
        let chi = backaction(cov, mm)?;
        let s = wigner_entropy(cov)?;
        let s_uc = wigner_entropy(cov_uc)?;
        let rate = entropy_rate(model, cov, &chi)?;
        let rate_uc = entropy_rate(model, cov_uc, &zero)?;
        let (flux, prod_uc) = flux_prod_uc(model, cov_uc, &series.mean_uc[k])?;
        let idot = info_rate(model, cov, cov_uc, &chi)?;
        ledger.entropy.push(s);
        ledger.entropy_uc.push(s_uc);
        ledger.entropy_rate.push(rate);
        ledger.entropy_rate_uc.push(rate_uc);
        ledger.flux_uc.push(flux);
        ledger.prod_uc.push(prod_uc);
        ledger.info_rate.push(idot);
        ledger.info.push(info_integrated(cov, cov_uc)?);
        ledger.prod.push(prod_uc + idot);
    }
    Ok(ledger)
}

/// Per-time samples of dφ/dt and dπ/dt over the successful trajectories.
#[derive(Debug, Clone)]
pub struct StochasticRates {
    pub times: Vec<f64>,
    /// `flux[k][i]`: trajectory i at record k.
    pub flux: Vec<Vec<f64>>,
    pub prod: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RateAverages {
    pub times: Vec<f64>,
    pub flux_mean: Vec<f64>,
    pub flux_se: Vec<f64>,
    pub prod_mean: Vec<f64>,
    pub prod_se: Vec<f64>,
}

pub fn stochastic_rates(model: &OpenModel, mm: &MonitoringMatrices, ensemble: &Ensemble) -> Result<StochasticRates> {
    let kernel = FluxKernel::new(model)?;
    let paths: Vec<_> = ensemble.successful().collect();
    let mut flux = Vec::with_capacity(ensemble.times.len());
    let mut prod = Vec::with_capacity(ensemble.times.len());
    for (k, cov) in ensemble.cov_series.iter().enumerate() {
        let chi = backaction(cov, mm)?;
        let (flux_trace, rate_term) = kernel.trace_parts(cov, &chi)?;
        let mut fk = Vec::with_capacity(paths.len());
        let mut pk = Vec::with_capacity(paths.len());
        for p in &paths {
            let q = kernel.quad(p.slice(k));
            fk.push(flux_trace - 2.0 * q);
            pk.push(-flux_trace + kernel.tr_a_irr + 2.0 * q + rate_term);
        }
        flux.push(fk);
        prod.push(pk);
    }
    Ok(StochasticRates {
        times: ensemble.times.clone(),
        flux,
        prod,
    })
}

fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

impl StochasticRates {
    pub fn averages(&self) -> RateAverages {
        let (flux_mean, flux_se): (Vec<f64>, Vec<f64>) = self.flux.iter().map(|s| mean_se(s)).unzip();
        let (prod_mean, prod_se): (Vec<f64>, Vec<f64>) = self.prod.iter().map(|s| mean_se(s)).unzip();
        RateAverages {
            times: self.times.clone(),
            flux_mean,
            flux_se,
            prod_mean,
            prod_se,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{monitoring_for, BathSpec, GeneralDyne};
    use crate::model::{build_opo_model, build_quench_model};
    use proptest::prelude::*;

    fn eye(c: f64) -> Mat {
        Mat::identity(2, 2) * c
    }

    fn quench(drive: f64) -> OpenModel {
        build_quench_model(1.0, 0.1, 49.5, drive, 0.0).unwrap()
    }

    #[test]
    fn entropy_rate_at_equilibrium_vanishes() {
        let r = entropy_rate(&quench(0.0), &eye(50.0), &Mat::zeros(2, 2)).unwrap();
        assert!(r.abs() < 1e-15);
    }

    #[test]
    fn entropy_rate_when_backaction_cancels_diffusion() {
        let m = quench(2.0);
        let cov = Mat::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 7.0]);
        let r = entropy_rate(&m, &cov, m.diffusion()).unwrap();
        assert!((r - m.drift().trace()).abs() < 1e-15);
    }

    #[test]
    fn entropy_rate_singular_cov() {
        assert!(matches!(
            entropy_rate(&quench(0.0), &Mat::zeros(2, 2), &Mat::zeros(2, 2)),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn flux_and_production_at_equilibrium() {
        let (f, p) = flux_prod_uc(&quench(0.0), &eye(50.0), &Vector::zeros(2)).unwrap();
        assert!(f.abs() < 1e-15 && p.abs() < 1e-15);
    }

    #[test]
    fn flux_and_production_hot_start() {
        let m = quench(0.0);
        let (f, p) = flux_prod_uc(&m, &eye(500.0), &Vector::zeros(2)).unwrap();
        assert!((f + 0.9).abs() < 1e-13);
        assert!((p - 0.81).abs() < 1e-13);
        let rate = entropy_rate(&m, &eye(500.0), &Mat::zeros(2, 2)).unwrap();
        assert!((f + p - rate).abs() < 1e-14);
        assert!((rate + 0.09).abs() < 1e-14);
    }

    #[test]
    fn mean_enters_quadratically() {
        let m = quench(2.0);
        let cov = eye(80.0);
        let x = Vector::from_vec(vec![1.3, -0.4]);
        let (f0, p0) = flux_prod_uc(&m, &cov, &Vector::zeros(2)).unwrap();
        let (f1, p1) = flux_prod_uc(&m, &cov, &x).unwrap();
        let (f2, p2) = flux_prod_uc(&m, &cov, &(&x * 2.0)).unwrap();
        assert!(((f2 - f0) - 4.0 * (f1 - f0)).abs() < 1e-13);
        assert!(((p2 - p0) - 4.0 * (p1 - p0)).abs() < 1e-13);
    }

    #[test]
    fn singular_diffusion_rejected() {
        let model = OpenModel::new(
            crate::model::QuadraticHamiltonian::new(
                Mat::zeros(2, 2),
                crate::model::DriveSchedule::constant(Vector::zeros(2)),
            )
            .unwrap(),
            eye(-1.0),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            1.0,
            0.0,
        )
        .unwrap();
        assert!(matches!(
            flux_prod_uc(&model, &eye(1.0), &Vector::zeros(2)),
            Err(Error::NumericDomain(_))
        ));
        assert!(stochastic_flux_prod(&model, &eye(1.0), &Mat::zeros(2, 2), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn info_rate_vanishes_without_monitoring() {
        let m = quench(2.0);
        let cov = Mat::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 7.0]);
        assert!(info_rate(&m, &cov, &cov, &Mat::zeros(2, 2)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn info_integrated_examples() {
        assert_eq!(info_integrated(&eye(2.0), &eye(2.0)).unwrap(), 0.0);
        let v = info_integrated(&eye(0.5), &eye(1.0)).unwrap();
        assert!((v + 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mutual_information_examples() {
        assert_eq!(mutual_information(&eye(0.7), &Mat::zeros(2, 2)).unwrap(), 0.0);
        let i = mutual_information(&eye(0.5), &eye(0.5)).unwrap();
        assert!((i - 2.0_f64.ln()).abs() < 1e-14);
        assert!(matches!(
            mutual_information(&eye(1.0), &eye(-1e-3)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn stochastic_rates_sum_to_entropy_rate() {
        let m = quench(2.0);
        let mm = monitoring_for(&BathSpec::for_model(&m).unwrap(), &GeneralDyne::heterodyne()).unwrap();
        let cov = Mat::from_row_slice(2, 2, &[120.0, 3.0, 3.0, 90.0]);
        let chi = backaction(&cov, &mm).unwrap();
        for x in [Vector::zeros(2), Vector::from_vec(vec![4.0, -7.0])] {
            let (f, p) = stochastic_flux_prod(&m, &cov, &chi, &x).unwrap();
            let r = entropy_rate(&m, &cov, &chi).unwrap();
            assert!((f + p - r).abs() < 1e-12);
        }
    }

    #[test]
    fn stochastic_rates_at_zero_mean() {
        // x̄ = 0: dφ = −TrA_irr − 2Tr[Mσ], dπ = 2TrA_irr + 2Tr[Mσ] + ½Tr[σ⁻¹(D−χ)]
        let m = build_opo_model(1.0, 2.001, 0.0).unwrap();
        let cov = Mat::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 30.0]);
        let chi = eye(0.01);
        let (f, p) = stochastic_flux_prod(&m, &cov, &chi, &Vector::zeros(2)).unwrap();
        // M = (γ/2)²/(γ/2) I = (γ/2)·I for A_irr = −γ/2 I and D = γ/2 I
        let g2 = 1.0005;
        let tr_ms = g2 * (0.4 + 30.0);
        let half = 0.5 * (0.9905 / 0.4 + 0.9905 / 30.0);
        assert!((f - (2.0 * g2 - 2.0 * tr_ms)).abs() < 1e-12);
        assert!((p - (-4.0 * g2 + 2.0 * tr_ms + half)).abs() < 1e-12);
    }

    fn spd(a: f64, b: f64, c: f64, lift: f64) -> Mat {
        let l = Mat::from_row_slice(2, 2, &[a, 0.0, b, c]);
        &l * l.transpose() + Mat::identity(2, 2) * lift
    }

    proptest! {
        #[test]
        fn info_is_minus_mutual_information(
            a in 0.2f64..3.0, b in -2.0f64..2.0, c in 0.2f64..3.0,
            p in -2.0f64..2.0, q in -2.0f64..2.0, r in -2.0f64..2.0,
        ) {
            let cov = spd(a, b, c, 0.05);
            let v = spd(p, q, r, 0.0);
            let lhs = info_integrated(&cov, &(&cov + &v)).unwrap();
            let rhs = mutual_information(&cov, &v).unwrap();
            prop_assert!((lhs + rhs).abs() < 1e-10);
            prop_assert!(rhs >= 0.0);
        }

        #[test]
        fn unconditional_production_non_negative(
            a in 0.8f64..30.0, b in -3.0f64..3.0, c in 0.8f64..30.0,
            x0 in -10.0f64..10.0, x1 in -10.0f64..10.0,
            gamma in 0.01f64..3.0, n_th in 0.0f64..60.0,
        ) {
            let model = build_quench_model(1.0, gamma, n_th, 0.0, 0.0).unwrap();
            let cov = spd(a, b, c, 0.5);
            let (f, p) = flux_prod_uc(&model, &cov, &Vector::from_vec(vec![x0, x1])).unwrap();
            prop_assert!(p >= -1e-9 * (1.0 + p.abs()));
            let rate = entropy_rate(&model, &cov, &Mat::zeros(2, 2)).unwrap();
            prop_assert!((f + p - rate).abs() < 1e-9 * (1.0 + rate.abs()));
        }
    }
}
