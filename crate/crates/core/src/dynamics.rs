//! Time integration of the moment equations.
//!
//! * conditional covariance: dσ/dt = Aσ + σAᵀ + D − χ(σ), fixed-step RK4;
//! * conditional mean: dx̄ = (Ax̄ + b)dt + (σCᵀ + Γᵀ)dw, Euler–Maruyama with the
//!   noise gain frozen at the start of each step;
//! * noise covariance: dV/dt = AV + VAᵀ + χ(σ), V(0) = 0, RK4.
//!
//! σ does not depend on the record, so it is integrated once and shared by all
//! trajectories. Every covariance is symmetrized after each step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{is_physical_cov, GaussianState, PHYSICALITY_TOL};
use crate::linalg::{self, Mat, Vector};
use crate::measurement::{backaction, MonitoringMatrices};
use crate::model::OpenModel;
use crate::rng::NormalStream;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub n_traj: usize,
    /// Keep every k-th grid point in the recorded series.
    pub record_every: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            seed: 0,
            n_traj: 1,
            record_every: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trajectories(mut self, n_traj: usize) -> Self {
        self.n_traj = n_traj;
        self
    }

    pub fn with_record_every(mut self, record_every: usize) -> Self {
        self.record_every = record_every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::validation("dt", "time step must be positive"));
        }
        if !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return Err(Error::validation("t_final", "horizon must be at least one step"));
        }
        if self.n_traj == 0 {
            return Err(Error::validation("trajectories", "need at least one trajectory"));
        }
        if self.record_every == 0 {
            return Err(Error::validation("record_every", "must be ≥ 1"));
        }
        let steps = (self.t_final / self.dt).round();
        if (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::validation("t_final", "horizon must be a multiple of dt"));
        }
        if (steps as usize) % self.record_every != 0 {
            return Err(Error::validation(
                "record_every",
                "number of steps must be a multiple of the recording stride",
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn record_count(&self) -> usize {
        self.steps() / self.record_every + 1
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn record_times(&self) -> Vec<f64> {
        (0..self.record_count())
            .map(|i| self.time(i * self.record_every))
            .collect()
    }

    /// Spacing of the recorded grid.
    pub fn record_dt(&self) -> f64 {
        self.dt * self.record_every as f64
    }
}

/// One realisation of the conditional dynamics.
///
/// `times`, `cov_series` and `mean_series` live on the recorded grid;
/// `increments` holds the Wiener increment of every integration step.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub cov_series: Vec<Mat>,
    pub mean_series: Vec<Vector>,
    pub increments: Vec<Vector>,
}

#[derive(Debug, Clone)]
pub struct NoiseCov {
    pub times: Vec<f64>,
    pub v_series: Vec<Mat>,
}

/// σ, V, σ_uc and x̄_uc integrated side by side on one grid.
#[derive(Debug, Clone)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub cov: Vec<Mat>,
    pub noise_cov: Vec<Mat>,
    pub cov_uc: Vec<Mat>,
    pub mean_uc: Vec<Vector>,
}

/// Right-hand side of the covariance flow; `mm = None` is the Lyapunov flow.
struct CovFlow<'a> {
    model: &'a OpenModel,
    mm: Option<&'a MonitoringMatrices>,
}

impl CovFlow<'_> {
    fn linear(&self, m: &Mat) -> Mat {
        let a = self.model.drift();
        a * m + m * a.transpose()
    }

    fn rhs(&self, cov: &Mat) -> Result<Mat> {
        let lin = self.linear(cov) + self.model.diffusion();
        match self.mm {
            Some(mm) => Ok(lin - backaction(cov, mm)?),
            None => Ok(lin),
        }
    }

    /// One RK4 step; also returns the four stage states.
    fn step(&self, cov: &Mat, dt: f64) -> Result<(Mat, [Mat; 4])> {
        let k1 = self.rhs(cov)?;
        let s2 = cov + &k1 * (0.5 * dt);
        let k2 = self.rhs(&s2)?;
        let s3 = cov + &k2 * (0.5 * dt);
        let k3 = self.rhs(&s3)?;
        let s4 = cov + &k3 * dt;
        let k4 = self.rhs(&s4)?;
        let mut next = cov + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        linalg::symmetrize_in_place(&mut next);
        Ok((next, [cov.clone(), s2, s3, s4]))
    }
}

/// RK4 step of dV/dt = AV + VAᵀ + χ(σ) with χ taken at the σ stage states.
fn noise_step(model: &OpenModel, mm: &MonitoringMatrices, v: &Mat, stages: &[Mat; 4], dt: f64) -> Result<Mat> {
    let a = model.drift();
    let f = |m: &Mat, stage: &Mat| -> Result<Mat> { Ok(a * m + m * a.transpose() + backaction(stage, mm)?) };
    let k1 = f(v, &stages[0])?;
    let k2 = f(&(v + &k1 * (0.5 * dt)), &stages[1])?;
    let k3 = f(&(v + &k2 * (0.5 * dt)), &stages[2])?;
    let k4 = f(&(v + &k3 * dt), &stages[3])?;
    let mut next = v + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    linalg::symmetrize_in_place(&mut next);
    Ok(next)
}

/// RK4 step of dx̄/dt = Ax̄ + b(t).
fn mean_uc_step(model: &OpenModel, x: &Vector, t: f64, dt: f64) -> Vector {
    let a = model.drift();
    let f = |y: &Vector, s: f64| a * y + model.drive_at(s);
    let k1 = f(x, t);
    let k2 = f(&(x + &k1 * (0.5 * dt)), t + 0.5 * dt);
    let k3 = f(&(x + &k2 * (0.5 * dt)), t + 0.5 * dt);
    let k4 = f(&(x + &k3 * dt), t + dt);
    x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

fn check_cov(cov: &Mat, step: usize, what: &str) -> Result<()> {
    if !linalg::all_finite(cov) {
        return Err(Error::IntegrationFailure {
            step,
            reason: format!("{what} became non-finite"),
        });
    }
    if !is_physical_cov(cov, PHYSICALITY_TOL) {
        return Err(Error::IntegrationFailure {
            step,
            reason: format!("{what} left the physical set (symplectic eigenvalue below 1/2)"),
        });
    }
    Ok(())
}

fn check_inputs(model: &OpenModel, state0: &GaussianState, mm: Option<&MonitoringMatrices>, cfg: &IntegratorConfig) -> Result<()> {
    cfg.validate()?;
    if state0.dim() != model.dim() {
        return Err(Error::invalid("initial state and model have different dimensions"));
    }
    if let Some(mm) = mm {
        if mm.system_dim() != model.dim() {
            return Err(Error::invalid("monitoring matrices and model have different dimensions"));
        }
    }
    if !state0.is_physical(PHYSICALITY_TOL) {
        return Err(Error::invalid("initial state is not physical"));
    }
    Ok(())
}

/// Deterministic σ pass: recorded covariances plus the noise gain at the
/// start of every step, flattened row-major (dim × outputs per step).
struct CovPass {
    recorded: Vec<Mat>,
    gains: Vec<f64>,
}

fn conditional_cov_pass(model: &OpenModel, mm: &MonitoringMatrices, cov0: &Mat, cfg: &IntegratorConfig) -> Result<CovPass> {
    let flow = CovFlow { model, mm: Some(mm) };
    let steps = cfg.steps();
    let dim = model.dim();
    let outs = mm.outputs();
    let mut recorded = Vec::with_capacity(cfg.record_count());
    let mut gains = Vec::with_capacity(steps * dim * outs);
    let mut cov = cov0.clone();
    recorded.push(cov.clone());
    for k in 0..steps {
        let g = mm.gain(&cov)?;
        for i in 0..dim {
            for j in 0..outs {
                gains.push(g[(i, j)]);
            }
        }
        cov = flow.step(&cov, cfg.dt)?.0;
        check_cov(&cov, k + 1, "conditional covariance")?;
        if (k + 1) % cfg.record_every == 0 {
            recorded.push(cov.clone());
        }
    }
    Ok(CovPass { recorded, gains })
}

/// Euler–Maruyama integrator of the conditional mean on a precomputed σ pass.
#[derive(Debug, Clone)]
pub struct MeanIntegrator {
    dim: usize,
    outs: usize,
    dt: f64,
    steps: usize,
    record_every: usize,
    drift: Vec<f64>,
    drive: Vec<f64>,
    gains: Vec<f64>,
}

impl MeanIntegrator {
    fn new(model: &OpenModel, outs: usize, gains: Vec<f64>, cfg: &IntegratorConfig) -> Self {
        let dim = model.dim();
        let steps = cfg.steps();
        let a = model.drift();
        let drift = (0..dim * dim).map(|idx| a[(idx / dim, idx % dim)]).collect();
        let mut drive = Vec::with_capacity(steps * dim);
        for k in 0..steps {
            drive.extend(model.drive_at(cfg.time(k)).iter().copied());
        }
        Self {
            dim,
            outs,
            dt: cfg.dt,
            steps,
            record_every: cfg.record_every,
            drift,
            drive,
            gains,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outputs(&self) -> usize {
        self.outs
    }

    /// Integrates one path; `noise(k, dw)` fills the increment of step k.
    /// Returns the recorded means flattened (record × dim).
    fn integrate(&self, x0: &[f64], mut noise: impl FnMut(usize, &mut [f64])) -> Result<Vec<f64>> {
        let (dim, outs) = (self.dim, self.outs);
        let mut x = x0.to_vec();
        let mut next = vec![0.0; dim];
        let mut dw = vec![0.0; outs];
        let mut out = Vec::with_capacity((self.steps / self.record_every + 1) * dim);
        out.extend_from_slice(&x);
        for k in 0..self.steps {
            noise(k, &mut dw);
            let g = &self.gains[k * dim * outs..(k + 1) * dim * outs];
            let b = &self.drive[k * dim..(k + 1) * dim];
            for i in 0..dim {
                let mut drift = b[i];
                for j in 0..dim {
                    drift += self.drift[i * dim + j] * x[j];
                }
                let mut kick = 0.0;
                for j in 0..outs {
                    kick += g[i * outs + j] * dw[j];
                }
                next[i] = x[i] + drift * self.dt + kick;
            }
            std::mem::swap(&mut x, &mut next);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationFailure {
                    step: k + 1,
                    reason: "conditional mean became non-finite".into(),
                });
            }
            if (k + 1) % self.record_every == 0 {
                out.extend_from_slice(&x);
            }
        }
        Ok(out)
    }

    /// Path driven by Gaussian increments from stream `trajectory` of `seed`.
    pub fn run_seeded(&self, x0: &Vector, seed: u64, trajectory: u64) -> Result<MeanPath> {
        let mut rng = NormalStream::new(seed, trajectory);
        let dt = self.dt;
        let data = self.integrate(x0.as_slice(), |_, dw| rng.fill_normal(dw, dt))?;
        Ok(MeanPath { dim: self.dim, data })
    }

    /// Path driven by caller-supplied increments, `steps × outputs` row-major.
    pub fn run_with_increments(&self, x0: &Vector, increments: &[f64]) -> Result<MeanPath> {
        if increments.len() != self.steps * self.outs {
            return Err(Error::invalid(format!(
                "expected {} increments, got {}",
                self.steps * self.outs,
                increments.len()
            )));
        }
        let outs = self.outs;
        let data = self.integrate(x0.as_slice(), |k, dw| {
            dw.copy_from_slice(&increments[k * outs..(k + 1) * outs])
        })?;
        Ok(MeanPath { dim: self.dim, data })
    }
}

/// Recorded conditional means of one trajectory, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPath {
    dim: usize,
    data: Vec<f64>,
}

impl MeanPath {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, k: usize) -> Vector {
        Vector::from_column_slice(self.slice(k))
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }
}

/// Deterministic σ pass plus a mean integrator sharing it.
pub fn conditional_mean_integrator(
    model: &OpenModel,
    mm: &MonitoringMatrices,
    state0: &GaussianState,
    cfg: &IntegratorConfig,
) -> Result<(MeanIntegrator, Vec<Mat>)> {
    check_inputs(model, state0, Some(mm), cfg)?;
    let pass = conditional_cov_pass(model, mm, state0.cov(), cfg)?;
    Ok((MeanIntegrator::new(model, mm.outputs(), pass.gains, cfg), pass.recorded))
}

/// One conditional trajectory (noise stream 0 of `cfg.seed`).
pub fn evolve_conditional(
    model: &OpenModel,
    mm: &MonitoringMatrices,
    state0: &GaussianState,
    cfg: &IntegratorConfig,
) -> Result<TrajectoryRecord> {
    let (integrator, cov_series) = conditional_mean_integrator(model, mm, state0, cfg)?;
    let mut rng = NormalStream::new(cfg.seed, 0);
    let mut increments = Vec::with_capacity(integrator.steps());
    let dt = cfg.dt;
    let data = integrator.integrate(state0.mean().as_slice(), |_, dw| {
        rng.fill_normal(dw, dt);
        increments.push(Vector::from_column_slice(dw));
    })?;
    debug_assert_eq!(increments.len(), integrator.steps());
    let path = MeanPath {
        dim: model.dim(),
        data,
    };
    Ok(TrajectoryRecord {
        times: cfg.record_times(),
        cov_series,
        mean_series: (0..path.len()).map(|k| path.at(k)).collect(),
        increments,
    })
}

/// Unconditional evolution: Lyapunov flow for σ, RK4 for dx̄/dt = Ax̄ + b.
pub fn evolve_unconditional(model: &OpenModel, state0: &GaussianState, cfg: &IntegratorConfig) -> Result<TrajectoryRecord> {
    check_inputs(model, state0, None, cfg)?;
    let flow = CovFlow { model, mm: None };
    let mut cov = state0.cov().clone();
    let mut mean = state0.mean().clone();
    let mut cov_series = vec![cov.clone()];
    let mut mean_series = vec![mean.clone()];
    for k in 0..cfg.steps() {
        cov = flow.step(&cov, cfg.dt)?.0;
        mean = mean_uc_step(model, &mean, cfg.time(k), cfg.dt);
        check_cov(&cov, k + 1, "unconditional covariance")?;
        if (k + 1) % cfg.record_every == 0 {
            cov_series.push(cov.clone());
            mean_series.push(mean.clone());
        }
    }
    Ok(TrajectoryRecord {
        times: cfg.record_times(),
        cov_series,
        mean_series,
        increments: Vec::new(),
    })
}

/// Noise covariance V(t) along a conditional covariance series sampled on
/// every integration step (`cfg.record_every` is ignored).
///
/// χ is evaluated at the RK4 stage states of the σ flow, recomputed from each
/// grid point, so σ + V integrates exactly like the unconditional Lyapunov flow.
pub fn evolve_noise_cov(
    model: &OpenModel,
    mm: &MonitoringMatrices,
    cov_series: &[Mat],
    cfg: &IntegratorConfig,
) -> Result<NoiseCov> {
    cfg.validate()?;
    let steps = cfg.steps();
    if cov_series.len() != steps + 1 {
        return Err(Error::invalid(format!(
            "covariance series has {} points, grid has {}",
            cov_series.len(),
            steps + 1
        )));
    }
    if mm.system_dim() != model.dim() || cov_series[0].nrows() != model.dim() {
        return Err(Error::invalid("dimension mismatch between series, model and monitoring"));
    }
    let flow = CovFlow { model, mm: Some(mm) };
    let dim = model.dim();
    let mut v = Mat::zeros(dim, dim);
    let mut v_series = Vec::with_capacity(steps + 1);
    v_series.push(v.clone());
    for k in 0..steps {
        let (next, stages) = flow.step(&cov_series[k], cfg.dt)?;
        let scale = 1.0 + linalg::max_abs(&next);
        if linalg::max_abs(&(&next - &cov_series[k + 1])) > 1e-8 * scale {
            return Err(Error::invalid(format!(
                "covariance series does not match this grid at step {}",
                k + 1
            )));
        }
        v = noise_step(model, mm, &v, &stages, cfg.dt)?;
        if !linalg::all_finite(&v) {
            return Err(Error::IntegrationFailure {
                step: k + 1,
                reason: "noise covariance became non-finite".into(),
            });
        }
        v_series.push(v.clone());
    }
    Ok(NoiseCov {
        times: (0..=steps).map(|k| cfg.time(k)).collect(),
        v_series,
    })
}

/// Co-integrates σ, V, σ_uc and x̄_uc, recording every `cfg.record_every` steps.
/// σ_uc is integrated on its own (not as σ + V).
pub fn evolve_moments(
    model: &OpenModel,
    mm: &MonitoringMatrices,
    state0: &GaussianState,
    cfg: &IntegratorConfig,
) -> Result<MomentSeries> {
    check_inputs(model, state0, Some(mm), cfg)?;
    let cond = CovFlow { model, mm: Some(mm) };
    let uncond = CovFlow { model, mm: None };
    let dim = model.dim();
    let mut cov = state0.cov().clone();
    let mut v = Mat::zeros(dim, dim);
    let mut cov_uc = cov.clone();
    let mut mean_uc = state0.mean().clone();
    let n = cfg.record_count();
    let mut out = MomentSeries {
        times: cfg.record_times(),
        cov: Vec::with_capacity(n),
        noise_cov: Vec::with_capacity(n),
        cov_uc: Vec::with_capacity(n),
        mean_uc: Vec::with_capacity(n),
    };
    out.cov.push(cov.clone());
    out.noise_cov.push(v.clone());
    out.cov_uc.push(cov_uc.clone());
    out.mean_uc.push(mean_uc.clone());
    for k in 0..cfg.steps() {
        let (next, stages) = cond.step(&cov, cfg.dt)?;
        v = noise_step(model, mm, &v, &stages, cfg.dt)?;
        cov = next;
        cov_uc = uncond.step(&cov_uc, cfg.dt)?.0;
        mean_uc = mean_uc_step(model, &mean_uc, cfg.time(k), cfg.dt);
        check_cov(&cov, k + 1, "conditional covariance")?;
        check_cov(&cov_uc, k + 1, "unconditional covariance")?;
        if !linalg::all_finite(&v) || mean_uc.iter().any(|x| !x.is_finite()) {
            return Err(Error::IntegrationFailure {
                step: k + 1,
                reason: "noise covariance or mean became non-finite".into(),
            });
        }
        if (k + 1) % cfg.record_every == 0 {
            out.cov.push(cov.clone());
            out.noise_cov.push(v.clone());
            out.cov_uc.push(cov_uc.clone());
            out.mean_uc.push(mean_uc.clone());
        }
    }
    Ok(out)
}

/// Sample moments of x̄ on the recorded grid over the successful trajectories.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub count: usize,
    pub mean: Vec<Vector>,
    /// Unbiased sample covariance.
    pub cov: Vec<Mat>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub cov_series: Vec<Mat>,
    /// `None` where the trajectory failed; see `failures`.
    pub paths: Vec<Option<MeanPath>>,
    pub failures: Vec<(usize, String)>,
    pub summary: MomentSummary,
}

impl Ensemble {
    pub fn successful(&self) -> impl Iterator<Item = &MeanPath> {
        self.paths.iter().flatten()
    }
}

/// Runs `cfg.n_traj` conditional trajectories. Trajectory i uses noise stream i
/// of `cfg.seed`; results do not depend on the thread count. Per-trajectory
/// failures are collected and the run continues.
pub fn run_ensemble(
    model: &OpenModel,
    mm: &MonitoringMatrices,
    state0: &GaussianState,
    cfg: &IntegratorConfig,
) -> Result<Ensemble> {
    if cfg.n_traj < 2 {
        return Err(Error::validation("trajectories", "an ensemble needs at least 2 trajectories"));
    }
    let (integrator, cov_series) = conditional_mean_integrator(model, mm, state0, cfg)?;
    let results: Vec<Result<MeanPath>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| integrator.run_seeded(state0.mean(), cfg.seed, i as u64))
        .collect();
    let mut paths = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => paths.push(Some(p)),
            Err(e) => {
                failures.push((i, e.to_string()));
                paths.push(None);
            }
        }
    }
    let summary = summarize(&paths, model.dim(), cfg.record_count());
    Ok(Ensemble {
        times: cfg.record_times(),
        cov_series,
        paths,
        failures,
        summary,
    })
}

fn summarize(paths: &[Option<MeanPath>], dim: usize, records: usize) -> MomentSummary {
    let ok: Vec<&MeanPath> = paths.iter().flatten().collect();
    let count = ok.len();
    let mut mean = Vec::with_capacity(records);
    let mut cov = Vec::with_capacity(records);
    for k in 0..records {
        let mut m = Vector::zeros(dim);
        for p in &ok {
            for (i, x) in p.slice(k).iter().enumerate() {
                m[i] += x;
            }
        }
        if count > 0 {
            m /= count as f64;
        }
        let mut c = Mat::zeros(dim, dim);
        for p in &ok {
            let x = p.slice(k);
            for i in 0..dim {
                for j in 0..dim {
                    c[(i, j)] += (x[i] - m[i]) * (x[j] - m[j]);
                }
            }
        }
        if count > 1 {
            c /= (count - 1) as f64;
        }
        mean.push(m);
        cov.push(c);
    }
    MomentSummary { count, mean, cov }
}
