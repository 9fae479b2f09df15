//! Independent oracles: steady-state solvers, finite differences and a
//! Monte Carlo z-gate.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{is_physical_cov, PHYSICALITY_TOL};
use crate::linalg::{self, Mat};
use crate::measurement::{backaction, MonitoringMatrices};
use crate::model::OpenModel;

/// Default statistical gate |z| < 3.
pub const Z_GATE: f64 = 3.0;

/// Solves Aσ + σAᵀ + D = 0 through the Kronecker-sum linear system
/// (I⊗A + A⊗I) vec σ = −vec D.
pub fn solve_lyapunov(drift: &Mat, diffusion: &Mat) -> Result<Mat> {
    linalg::ensure_square(drift, "drift")?;
    linalg::ensure_same_shape(drift, diffusion, "drift vs diffusion")?;
    let abscissa = linalg::spectral_abscissa(drift);
    if !(abscissa < 0.0) {
        return Err(Error::NoSteadyState(format!(
            "drift is not Hurwitz (max Re λ = {abscissa:.3e})"
        )));
    }
    let n = drift.nrows();
    let id = Mat::identity(n, n);
    let k = id.kronecker(drift) + drift.kronecker(&id);
    let rhs = -DVector::from_column_slice(diffusion.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoSteadyState("Kronecker system is singular".into()))?;
    Ok(linalg::symmetrize(&Mat::from_column_slice(n, n, sol.as_slice())))
}

/// ‖Aσ + σAᵀ + D − χ(σ)‖_∞ (max-abs entry).
pub fn riccati_residual(model: &OpenModel, mm: &MonitoringMatrices, cov: &Mat) -> Result<f64> {
    let a = model.drift();
    let r = a * cov + cov * a.transpose() + model.diffusion() - backaction(cov, mm)?;
    Ok(linalg::max_abs(&r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    pub tol: f64,
    pub dt: f64,
    pub max_horizon: f64,
    /// Residual is sampled into the history every this many steps.
    pub history_every: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            dt: 1e-2,
            max_horizon: 1e5,
            history_every: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyStateReport {
    #[serde(serialize_with = "ser_mat")]
    pub cov: Mat,
    pub residual: f64,
    pub horizon: f64,
    pub steps: usize,
    pub converged: bool,
    /// (t, residual) samples along the run.
    pub history: Vec<(f64, f64)>,
}

fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Locates a fixed point of the Riccati flow by RK4 integration, stopping as
/// soon as the residual drops below `opts.tol`. Non-convergence within the
/// horizon is reported through `converged = false`.
pub fn riccati_steady_state(
    model: &OpenModel,
    mm: &MonitoringMatrices,
    cov0: &Mat,
    opts: &SteadyStateOptions,
) -> Result<SteadyStateReport> {
    if !(opts.dt > 0.0) || !(opts.max_horizon > 0.0) || !(opts.tol > 0.0) || opts.history_every == 0 {
        return Err(Error::invalid("steady-state options must be positive"));
    }
    if cov0.shape() != model.drift().shape() {
        return Err(Error::invalid("initial covariance has the wrong shape"));
    }
    let a = model.drift();
    let d = model.diffusion();
    let rhs = |c: &Mat| -> Result<Mat> { Ok(a * c + c * a.transpose() + d - backaction(c, mm)?) };
    let max_steps = (opts.max_horizon / opts.dt).ceil() as usize;
    let mut cov = linalg::symmetrize(cov0);
    let mut history = Vec::new();
    let mut residual = linalg::max_abs(&rhs(&cov)?);
    let mut step = 0;
    while step < max_steps && residual >= opts.tol {
        let h = opts.dt;
        let k1 = rhs(&cov)?;
        let k2 = rhs(&(&cov + &k1 * (0.5 * h)))?;
        let k3 = rhs(&(&cov + &k2 * (0.5 * h)))?;
        let k4 = rhs(&(&cov + &k3 * h))?;
        cov += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        linalg::symmetrize_in_place(&mut cov);
        step += 1;
        if !linalg::all_finite(&cov) || !is_physical_cov(&cov, PHYSICALITY_TOL) {
            return Err(Error::IntegrationFailure {
                step,
                reason: "steady-state search left the physical set".into(),
            });
        }
        residual = linalg::max_abs(&rhs(&cov)?);
        if step % opts.history_every == 0 {
            history.push((step as f64 * h, residual));
        }
    }
    Ok(SteadyStateReport {
        cov,
        residual,
        horizon: step as f64 * opts.dt,
        steps: step,
        converged: residual < opts.tol,
        history,
    })
}

/// Second-order finite differences on a uniform grid: centred in the interior,
/// one-sided three-point stencils at the ends.
pub fn finite_difference(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 3 {
        return Err(Error::invalid("finite differences need at least 3 points"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("grid spacing must be positive"));
    }
    let mut out = Vec::with_capacity(n);
    out.push((-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * dt));
    for i in 1..n - 1 {
        out.push((series[i + 1] - series[i - 1]) / (2.0 * dt));
    }
    out.push((3.0 * series[n - 1] - 4.0 * series[n - 2] + series[n - 3]) / (2.0 * dt));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZReport {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub target: f64,
    pub z: f64,
    pub pass: bool,
}

/// z = (mean − target)/SE with the default gate |z| < 3.
pub fn mc_tester(samples: &[f64], target: f64) -> Result<ZReport> {
    mc_tester_with_gate(samples, target, Z_GATE)
}

pub fn mc_tester_with_gate(samples: &[f64], target: f64, gate: f64) -> Result<ZReport> {
    let n = samples.len();
    if n < 100 {
        return Err(Error::invalid(format!("z-gate needs at least 100 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let std_error = (var / nf).sqrt();
    let z = if std_error > 0.0 {
        (mean - target) / std_error
    } else if mean == target {
        0.0
    } else {
        (mean - target).signum() * f64::INFINITY
    };
    Ok(ZReport {
        n,
        mean,
        std_error,
        target,
        z,
        pass: z.abs() < gate,
    })
}

/// z-scores of every upper-triangular entry of the sample covariance of
/// `points` against `target`. Each entry is tested as the mean of the centred
/// products (xᵢ − x̄ᵢ)(xⱼ − x̄ⱼ).
pub fn covariance_zscores<'a, I>(points: I, target: &Mat) -> Result<Vec<((usize, usize), ZReport)>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let pts: Vec<&[f64]> = points.into_iter().collect();
    let dim = target.nrows();
    if pts.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("sample dimension does not match target"));
    }
    let n = pts.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in &pts {
        for i in 0..dim {
            mean[i] += p[i] / n;
        }
    }
    let mut out = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            let prods: Vec<f64> = pts.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).collect();
            out.push(((i, j), mc_tester(&prods, target[(i, j)])?));
        }
    }
    Ok(out)
}
