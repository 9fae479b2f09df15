//! Scenario files and the drivers that turn them into data files.
//!
//! A scenario is a TOML document with the sections `[model]`,
//! `[measurement]`, `[initial]`, `[integrator]` and `[output]`. Only
//! `[model]` and `[measurement]` are required; everything else falls back to
//! the defaults of the chosen model kind:
//!
//! ```toml
//! [model]
//! kind = "quench"          # or "opo"
//! omega = 1.0              # quench: omega, gamma, n_th, drive_amplitude, drive_phase
//! gamma = 0.1              # opo:    kappa, gamma, n_th
//! n_th = 49.5
//! drive_amplitude = 2.0
//! drive_phase = 0.0
//!
//! [measurement]
//! preset = "heterodyne"    # homodyne_x | homodyne_p | heterodyne | general
//! # s = 1.0               # general only, s > 0
//! # angle = 0.0           # general only, radians
//! efficiency = 1.0
//! excess_noise = 0.0       # quench default 0, opo default 0.1
//!
//! [initial]
//! mean = [1.0, 1.0]
//! thermal_occupation = 499.5   # or: squeezing = 1.0, or: cov = [[..], [..]]
//!
//! [integrator]
//! dt = 1e-3
//! t_final = 60.0           # quench default 60, opo default 20
//! seed = 1
//! trajectories = 10000
//!
//! [output]
//! record_every = 1
//! ensemble_record_every = 1000
//! per_trajectory = false
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_moments, run_ensemble, IntegratorConfig, MomentSeries};
use crate::error::{Error, Result};
use crate::gaussian::{is_physical_cov, symplectic_eigenvalues, GaussianState, PHYSICALITY_TOL};
use crate::linalg::{self, Mat, Vector};
use crate::measurement::{monitoring_for, BathSpec, DyneScale, GeneralDyne, MonitoringMatrices};
use crate::model::{build_opo_model, build_quench_model, OpenModel};
use crate::thermo::{build_ledger, mutual_information, stochastic_rates, ThermoLedger};
use crate::validation::{covariance_zscores, finite_difference, mc_tester, solve_lyapunov, ZReport, Z_GATE};

pub const LEDGER_COLUMNS: [&str; 9] = ["t", "S", "S_uc", "dSdt", "Phi_uc", "Pi_uc", "Idot", "I", "Pi"];
pub const ENSEMBLE_COLUMNS: [&str; 9] = [
    "t", "dphi_mean", "dphi_se", "Phi_uc", "z_phi", "dpi_mean", "dpi_se", "Pi_target", "z_pi",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
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
}

impl ModelSpec {
    pub fn quench_default() -> Self {
        ModelSpec::Quench {
            omega: 1.0,
            gamma: 0.1,
            n_th: 49.5,
            drive_amplitude: 2.0,
            drive_phase: 0.0,
        }
    }

    pub fn opo_default() -> Self {
        ModelSpec::Opo {
            kappa: 1.0,
            gamma: 2.001,
            n_th: 0.0,
        }
    }

    pub fn build(&self) -> Result<OpenModel> {
        match *self {
            ModelSpec::Quench {
                omega,
                gamma,
                n_th,
                drive_amplitude,
                drive_phase,
            } => build_quench_model(omega, gamma, n_th, drive_amplitude, drive_phase),
            ModelSpec::Opo { kappa, gamma, n_th } => build_opo_model(kappa, gamma, n_th),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            ModelSpec::Quench { .. } => "quench",
            ModelSpec::Opo { .. } => "opo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum Preset {
    HomodyneX,
    HomodyneP,
    Heterodyne,
    General { s: f64, angle: f64 },
}

impl Preset {
    /// Parses a bare preset name; `general` needs its parameters and is rejected here.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "homodyne_x" => Ok(Preset::HomodyneX),
            "homodyne_p" => Ok(Preset::HomodyneP),
            "heterodyne" => Ok(Preset::Heterodyne),
            "general" => Err(Error::validation(
                "measurement.preset",
                "`general` takes s and angle; set it in the scenario file",
            )),
            other => Err(Error::validation(
                "measurement.preset",
                format!("unknown preset `{other}` (homodyne_x, homodyne_p, heterodyne, general)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::HomodyneX => "homodyne_x",
            Preset::HomodyneP => "homodyne_p",
            Preset::Heterodyne => "heterodyne",
            Preset::General { .. } => "general",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    #[serde(flatten)]
    pub preset: Preset,
    pub efficiency: f64,
    pub excess_noise: f64,
}

impl MeasurementSpec {
    pub fn detector(&self) -> Result<GeneralDyne> {
        let (scale, angle) = match self.preset {
            Preset::HomodyneX => (DyneScale::Infinite, 0.0),
            Preset::HomodyneP => (DyneScale::Zero, 0.0),
            Preset::Heterodyne => (DyneScale::Finite(1.0), 0.0),
            Preset::General { s, angle } => (DyneScale::Finite(s), angle),
        };
        GeneralDyne::new(scale, angle, self.efficiency, self.excess_noise).map_err(|e| match e {
            Error::Validation { field, message } => Error::Validation {
                field: format!("measurement.{field}"),
                message,
            },
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum InitialCov {
    Thermal { occupation: f64 },
    SqueezedVacuum { squeezing: f64 },
    Matrix { cov: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    pub mean: Vec<f64>,
    #[serde(flatten)]
    pub cov: InitialCov,
}

impl InitialSpec {
    pub fn state(&self) -> Result<GaussianState> {
        let base = match &self.cov {
            InitialCov::Thermal { occupation } => GaussianState::thermal(1, *occupation),
            InitialCov::SqueezedVacuum { squeezing } => GaussianState::squeezed_vacuum(*squeezing),
            InitialCov::Matrix { cov } => {
                let n = cov.len();
                if n == 0 || cov.iter().any(|r| r.len() != n) {
                    return Err(Error::validation("initial.cov", "must be a non-empty square matrix"));
                }
                let m = Mat::from_fn(n, n, |i, j| cov[i][j]);
                GaussianState::physical(Vector::zeros(n), m)
            }
        }
        .map_err(|e| Error::validation("initial", e.to_string()))?;
        if self.mean.len() != base.dim() {
            return Err(Error::validation(
                "initial.mean",
                format!("expected {} entries, got {}", base.dim(), self.mean.len()),
            ));
        }
        base.with_mean(Vector::from_column_slice(&self.mean))
            .map_err(|e| Error::validation("initial.mean", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub trajectories: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub record_every: usize,
    pub ensemble_record_every: usize,
    pub per_trajectory: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            record_every: 1,
            ensemble_record_every: 1000,
            per_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: ModelSpec,
    pub measurement: MeasurementSpec,
    pub initial: InitialSpec,
    pub integrator: IntegratorSpec,
    pub output: OutputSpec,
}

/// Everything a run needs, built from a validated scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: OpenModel,
    pub detector: GeneralDyne,
    pub monitoring: MonitoringMatrices,
    pub state0: GaussianState,
}

impl Scenario {
    /// Thermal quench with heterodyne detection.
    pub fn quench_default() -> Self {
        let model = ModelSpec::quench_default();
        Self::with_defaults(model, Preset::Heterodyne)
    }

    pub fn opo_default(preset: Preset) -> Self {
        Self::with_defaults(ModelSpec::opo_default(), preset)
    }

    fn with_defaults(model: ModelSpec, preset: Preset) -> Self {
        let (excess_noise, initial, t_final) = match model {
            ModelSpec::Quench { .. } => (
                0.0,
                InitialSpec {
                    mean: vec![1.0, 1.0],
                    cov: InitialCov::Thermal { occupation: 499.5 },
                },
                60.0,
            ),
            ModelSpec::Opo { .. } => (
                0.1,
                InitialSpec {
                    mean: vec![0.0, 0.0],
                    cov: InitialCov::SqueezedVacuum { squeezing: 1.0 },
                },
                20.0,
            ),
        };
        Self {
            model,
            measurement: MeasurementSpec {
                preset,
                efficiency: 1.0,
                excess_noise,
            },
            initial,
            integrator: IntegratorSpec {
                dt: 1e-3,
                t_final,
                seed: 1,
                trajectories: 10_000,
            },
            output: OutputSpec::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_run_metadata(&text);
        }
        parse_scenario(&text)
    }

    /// Recovers the scenario stored in a `run.json`.
    pub fn from_run_metadata(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            scenario: Scenario,
        }
        let meta: Meta = serde_json::from_str(json)?;
        meta.scenario.validate()?;
        Ok(meta.scenario)
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig::new(self.integrator.dt, self.integrator.t_final)
            .with_seed(self.integrator.seed)
            .with_trajectories(self.integrator.trajectories)
            .with_record_every(self.output.record_every)
    }

    pub fn ensemble_config(&self, n_traj: usize) -> IntegratorConfig {
        IntegratorConfig::new(self.integrator.dt, self.integrator.t_final)
            .with_seed(self.integrator.seed)
            .with_trajectories(n_traj)
            .with_record_every(self.output.ensemble_record_every)
    }

    /// Checks every constraint, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        self.setup().map(|_| ())
    }

    pub fn setup(&self) -> Result<Setup> {
        let model = self
            .model
            .build()
            .map_err(|e| Error::validation("model", e.to_string()))?;
        let detector = self.measurement.detector()?;
        let bath = BathSpec::for_model(&model)?;
        let monitoring = monitoring_for(&bath, &detector)?;
        let state0 = self.initial.state()?;
        if state0.dim() != model.dim() {
            return Err(Error::validation("initial", "state dimension does not match the model"));
        }
        let cfg = self.integrator_config();
        cfg.validate().map_err(|e| Error::validation("integrator", e.to_string()))?;
        Ok(Setup {
            model,
            detector,
            monitoring,
            state0,
        })
    }
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    model: Option<RawModel>,
    measurement: Option<RawMeasurement>,
    initial: Option<RawInitial>,
    integrator: Option<RawIntegrator>,
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<String>,
    omega: Option<f64>,
    gamma: Option<f64>,
    n_th: Option<f64>,
    drive_amplitude: Option<f64>,
    drive_phase: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    preset: Option<String>,
    s: Option<f64>,
    angle: Option<f64>,
    efficiency: Option<f64>,
    excess_noise: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    mean: Option<Vec<f64>>,
    thermal_occupation: Option<f64>,
    squeezing: Option<f64>,
    cov: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    dt: Option<f64>,
    t_final: Option<f64>,
    seed: Option<u64>,
    trajectories: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    record_every: Option<usize>,
    ensemble_record_every: Option<usize>,
    per_trajectory: Option<bool>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn reject(field: &str, kind: &str) -> Error {
    Error::validation(format!("model.{field}"), format!("not a parameter of the {kind} model"))
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().trim().to_string(),
    })?;

    let rm = raw.model.ok_or_else(|| Error::validation("model", "[model] section required"))?;
    let kind = rm
        .kind
        .as_deref()
        .ok_or_else(|| Error::validation("model.kind", "model kind required (quench or opo)"))?;
    let model = match kind {
        "quench" => {
            if rm.kappa.is_some() {
                return Err(reject("kappa", "quench"));
            }
            let ModelSpec::Quench {
                omega,
                gamma,
                n_th,
                drive_amplitude,
                drive_phase,
            } = ModelSpec::quench_default()
            else {
                unreachable!()
            };
            ModelSpec::Quench {
                omega: rm.omega.unwrap_or(omega),
                gamma: rm.gamma.unwrap_or(gamma),
                n_th: rm.n_th.unwrap_or(n_th),
                drive_amplitude: rm.drive_amplitude.unwrap_or(drive_amplitude),
                drive_phase: rm.drive_phase.unwrap_or(drive_phase),
            }
        }
        "opo" => {
            for (name, v) in [("omega", rm.omega), ("drive_amplitude", rm.drive_amplitude), ("drive_phase", rm.drive_phase)] {
                if v.is_some() {
                    return Err(reject(name, "opo"));
                }
            }
            let ModelSpec::Opo { kappa, gamma, n_th } = ModelSpec::opo_default() else {
                unreachable!()
            };
            ModelSpec::Opo {
                kappa: rm.kappa.unwrap_or(kappa),
                gamma: rm.gamma.unwrap_or(gamma),
                n_th: rm.n_th.unwrap_or(n_th),
            }
        }
        other => {
            return Err(Error::validation(
                "model.kind",
                format!("unknown model kind `{other}` (quench or opo)"),
            ))
        }
    };

    let (rmeas, preset_name) = match raw.measurement {
        Some(RawMeasurement { preset: Some(ref p), .. }) => {
            let p = p.clone();
            (raw.measurement.expect("matched Some"), p)
        }
        _ => return Err(Error::validation("measurement.preset", "measurement preset required")),
    };
    let preset_name = preset_name.as_str();
    let preset = if preset_name == "general" {
        let s = rmeas
            .s
            .ok_or_else(|| Error::validation("measurement.s", "general preset requires s (s > 0)"))?;
        Preset::General {
            s,
            angle: rmeas.angle.unwrap_or(0.0),
        }
    } else {
        if rmeas.s.is_some() || rmeas.angle.is_some() {
            return Err(Error::validation(
                "measurement",
                format!("s and angle only apply to the general preset, not `{preset_name}`"),
            ));
        }
        Preset::from_name(preset_name)?
    };
    let mut sc = Scenario::with_defaults(model, preset);
    if let Some(eta) = rmeas.efficiency {
        sc.measurement.efficiency = eta;
    }
    if let Some(delta) = rmeas.excess_noise {
        sc.measurement.excess_noise = delta;
    }

    if let Some(ri) = raw.initial {
        let given = [ri.thermal_occupation.is_some(), ri.squeezing.is_some(), ri.cov.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if given > 1 {
            return Err(Error::validation(
                "initial",
                "give at most one of thermal_occupation, squeezing, cov",
            ));
        }
        if let Some(occupation) = ri.thermal_occupation {
            sc.initial.cov = InitialCov::Thermal { occupation };
        } else if let Some(squeezing) = ri.squeezing {
            sc.initial.cov = InitialCov::SqueezedVacuum { squeezing };
        } else if let Some(cov) = ri.cov {
            sc.initial.cov = InitialCov::Matrix { cov };
        }
        if let Some(mean) = ri.mean {
            sc.initial.mean = mean;
        }
    }
    if let Some(ri) = raw.integrator {
        if let Some(dt) = ri.dt {
            sc.integrator.dt = dt;
        }
        if let Some(t) = ri.t_final {
            sc.integrator.t_final = t;
        }
        if let Some(seed) = ri.seed {
            sc.integrator.seed = seed;
        }
        if let Some(n) = ri.trajectories {
            sc.integrator.trajectories = n;
        }
    }
    if let Some(ro) = raw.output {
        if let Some(k) = ro.record_every {
            sc.output.record_every = k;
        }
        if let Some(k) = ro.ensemble_record_every {
            sc.output.ensemble_record_every = k;
        }
        if let Some(b) = ro.per_trajectory {
            sc.output.per_trajectory = b;
        }
    }
    sc.validate()?;
    Ok(sc)
}

// ---------------------------------------------------------------------------
// output

/// Twelve significant digits, period decimal separator.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn ledger_rows(l: &ThermoLedger) -> impl Iterator<Item = [f64; 9]> + '_ {
    (0..l.len()).map(move |k| {
        [
            l.times[k],
            l.entropy[k],
            l.entropy_uc[k],
            l.entropy_rate[k],
            l.flux_uc[k],
            l.prod_uc[k],
            l.info_rate[k],
            l.info[k],
            l.prod[k],
        ]
    })
}

fn write_rows<W: Write, const N: usize>(
    w: &mut W,
    header: &[&str; N],
    rows: impl Iterator<Item = [f64; N]>,
) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_num(x)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_ledger_csv<W: Write>(ledger: &ThermoLedger, w: &mut W) -> Result<()> {
    write_rows(w, &LEDGER_COLUMNS, ledger_rows(ledger))
}

/// A numeric CSV table read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_csv(text: &str) -> Result<Table> {
    let parse_err = |line: u64, message: String| Error::Parse {
        line: line as usize,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.iter().all(String::is_empty) {
        return Err(parse_err(1, "empty file".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(line, e.to_string()))?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

#[derive(Debug, Clone, Serialize)]
struct RunMetadata<'a> {
    version: &'static str,
    command: &'a str,
    scenario: &'a Scenario,
    seed: u64,
    dt: f64,
    t_final: f64,
    steps: usize,
    record_every: usize,
    records: usize,
    columns: Vec<&'static str>,
    files: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectories: Option<usize>,
}

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: MomentSeries,
    pub ledger: ThermoLedger,
}

/// Integrates the scenario and returns its ledger without touching disk.
pub fn compute(scenario: &Scenario) -> Result<RunOutput> {
    let setup = scenario.setup()?;
    let cfg = scenario.integrator_config();
    let series = evolve_moments(&setup.model, &setup.monitoring, &setup.state0, &cfg)?;
    let ledger = build_ledger(&setup.model, &setup.monitoring, &series)?;
    Ok(RunOutput { series, ledger })
}

/// Writes `ledger.csv` and `run.json` into `out`.
pub fn run(scenario: &Scenario, out: &Path) -> Result<RunOutput> {
    let result = compute(scenario)?;
    create_out_dir(out)?;
    write_file(&out.join("ledger.csv"), |w| write_ledger_csv(&result.ledger, w))?;
    let cfg = scenario.integrator_config();
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION"),
        command: "run",
        scenario,
        seed: cfg.seed,
        dt: cfg.dt,
        t_final: cfg.t_final,
        steps: cfg.steps(),
        record_every: cfg.record_every,
        records: result.ledger.len(),
        columns: LEDGER_COLUMNS.to_vec(),
        files: vec!["ledger.csv"],
        trajectories: None,
    };
    write_file(&out.join("run.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct ZEntry {
    pub t: f64,
    pub quantity: String,
    #[serde(flatten)]
    pub report: ZReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZSummary {
    pub n_traj: usize,
    pub seed: u64,
    pub gate: f64,
    pub tests: usize,
    pub failed: usize,
    pub max_abs_z: f64,
    pub entries: Vec<ZEntry>,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub times: Vec<f64>,
    /// Rows in `ENSEMBLE_COLUMNS` order.
    pub rows: Vec<[f64; 9]>,
    pub zscores: Option<ZSummary>,
    pub failures: Vec<(usize, String)>,
}

/// Runs `n_traj` conditional trajectories and compares their averaged
/// stochastic flux and production rates with the deterministic ledger. Writes
/// `ensemble.csv`, `zscores.json` (when n_traj ≥ 100), `run.json` and,
/// if requested, `trajectories.csv`.
pub fn ensemble(scenario: &Scenario, n_traj: usize, out: &Path) -> Result<EnsembleOutput> {
    if n_traj < 2 {
        return Err(Error::validation("trajectories", "an ensemble needs at least 2 trajectories"));
    }
    let setup = scenario.setup()?;
    let cfg = scenario.ensemble_config(n_traj);
    let stride = scenario.output.ensemble_record_every;
    if stride == 0 || cfg.steps() % stride != 0 {
        return Err(Error::validation(
            "output.ensemble_record_every",
            format!("must be ≥ 1 and divide the step count {}", cfg.steps()),
        ));
    }
    let ens = run_ensemble(&setup.model, &setup.monitoring, &setup.state0, &cfg)?;
    let series = evolve_moments(&setup.model, &setup.monitoring, &setup.state0, &cfg)?;
    let ledger = build_ledger(&setup.model, &setup.monitoring, &series)?;
    let rates = stochastic_rates(&setup.model, &setup.monitoring, &ens)?;
    let avg = rates.averages();
    let zval = |mean: f64, se: f64, target: f64| if se > 0.0 { (mean - target) / se } else { f64::NAN };
    let rows: Vec<[f64; 9]> = (0..avg.times.len())
        .map(|k| {
            [
                avg.times[k],
                avg.flux_mean[k],
                avg.flux_se[k],
                ledger.flux_uc[k],
                zval(avg.flux_mean[k], avg.flux_se[k], ledger.flux_uc[k]),
                avg.prod_mean[k],
                avg.prod_se[k],
                ledger.prod[k],
                zval(avg.prod_mean[k], avg.prod_se[k], ledger.prod[k]),
            ]
        })
        .collect();

    // record 0 is deterministic (every trajectory starts at x̄₀) and is skipped
    let zscores = if ens.summary.count >= 100 {
        let mut entries = Vec::new();
        let paths: Vec<_> = ens.successful().collect();
        for k in 1..avg.times.len() {
            let t = avg.times[k];
            entries.push(ZEntry {
                t,
                quantity: "dphi".into(),
                report: mc_tester(&rates.flux[k], ledger.flux_uc[k])?,
            });
            entries.push(ZEntry {
                t,
                quantity: "dpi".into(),
                report: mc_tester(&rates.prod[k], ledger.prod[k])?,
            });
            let zs = covariance_zscores(paths.iter().map(|p| p.slice(k)), &series.noise_cov[k])?;
            for ((i, j), report) in zs {
                entries.push(ZEntry {
                    t,
                    quantity: format!("cov[{i}{j}]"),
                    report,
                });
            }
        }
        let failed = entries.iter().filter(|e| !e.report.pass).count();
        let max_abs_z = entries.iter().map(|e| e.report.z.abs()).fold(0.0, f64::max);
        Some(ZSummary {
            n_traj,
            seed: cfg.seed,
            gate: Z_GATE,
            tests: entries.len(),
            failed,
            max_abs_z,
            entries,
        })
    } else {
        None
    };

    create_out_dir(out)?;
    write_file(&out.join("ensemble.csv"), |w| write_rows(w, &ENSEMBLE_COLUMNS, rows.iter().copied()))?;
    let mut files = vec!["ensemble.csv"];
    if let Some(z) = &zscores {
        write_file(&out.join("zscores.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, z)?;
            writeln!(w)?;
            Ok(())
        })?;
        files.push("zscores.json");
    }
    if scenario.output.per_trajectory {
        write_file(&out.join("trajectories.csv"), |w| {
            let dim = setup.model.dim();
            let mut header = vec!["traj".to_string(), "t".to_string()];
            header.extend((0..dim).map(|i| format!("x{i}")));
            header.extend(["dphi".to_string(), "dpi".to_string()]);
            writeln!(w, "{}", header.join(","))?;
            let ok = ens.paths.iter().enumerate().filter_map(|(i, p)| p.as_ref().map(|p| (i, p)));
            // rates are stored per successful trajectory, in index order
            for (col, (i, path)) in ok.enumerate() {
                for k in 0..avg.times.len() {
                    let mut cells = vec![i.to_string(), fmt_num(avg.times[k])];
                    cells.extend(path.slice(k).iter().map(|&x| fmt_num(x)));
                    cells.push(fmt_num(rates.flux[k][col]));
                    cells.push(fmt_num(rates.prod[k][col]));
                    writeln!(w, "{}", cells.join(","))?;
                }
            }
            Ok(())
        })?;
        files.push("trajectories.csv");
    }
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION"),
        command: "ensemble",
        scenario,
        seed: cfg.seed,
        dt: cfg.dt,
        t_final: cfg.t_final,
        steps: cfg.steps(),
        record_every: cfg.record_every,
        records: rows.len(),
        columns: ENSEMBLE_COLUMNS.to_vec(),
        files,
        trajectories: Some(n_traj),
    };
    write_file(&out.join("run.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(EnsembleOutput {
        times: avg.times,
        rows,
        zscores,
        failures: ens.failures,
    })
}

// ---------------------------------------------------------------------------
// invariant table

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs the scenario and evaluates the invariants that must hold on any run.
pub fn validate(scenario: &Scenario) -> Result<Vec<Check>> {
    let setup = scenario.setup()?;
    let RunOutput { series, ledger } = compute(scenario)?;
    let cfg = scenario.integrator_config();
    let mut checks = Vec::new();
    let mut push = |name, value: f64, tolerance, pass: bool| {
        checks.push(Check {
            name,
            value,
            tolerance,
            pass,
        })
    };
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max_abs_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let pi_uc = min(&ledger.prod_uc);
    push("min Pi_uc", pi_uc, -1e-9, pi_uc >= -1e-9);
    let refined: Vec<f64> = ledger.prod.iter().zip(&ledger.info_rate).map(|(p, i)| p - i).collect();
    let r = min(&refined);
    push("min (Pi - Idot)", r, -1e-9, r >= -1e-9);
    let imax = ledger.info.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    push("max I", imax, 1e-9, imax <= 1e-9);
    push("|I(0)|", ledger.info[0].abs(), 0.0, ledger.info[0] == 0.0);

    let cons = (0..series.times.len())
        .map(|k| linalg::max_abs(&(&series.cov[k] + &series.noise_cov[k] - &series.cov_uc[k])))
        .fold(0.0, f64::max);
    push("max |sigma + V - sigma_uc|", cons, 1e-6, cons < 1e-6);

    let mi = (0..series.times.len())
        .map(|k| mutual_information(&series.cov[k], &series.noise_cov[k]).map(|m| (ledger.info[k] + m).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    push("max |I + mutual information|", mi, 1e-9, mi < 1e-9);

    let nu_min = series
        .cov
        .iter()
        .chain(&series.cov_uc)
        .flat_map(|c| symplectic_eigenvalues(c))
        .fold(f64::INFINITY, f64::min);
    let physical = series.cov.iter().chain(&series.cov_uc).all(|c| is_physical_cov(c, PHYSICALITY_TOL));
    push("min symplectic eigenvalue - 1/2", nu_min - 0.5, -PHYSICALITY_TOL, physical);

    if ledger.len() >= 3 {
        let h = cfg.record_dt();
        let half_ln_det: Vec<f64> = series
            .cov
            .iter()
            .map(|c| linalg::ln_det_spd(c).map(|l| 0.5 * l))
            .collect::<Result<_>>()?;
        let fd = finite_difference(&half_ln_det, h)?;
        let e = max_abs_diff(&fd, &ledger.entropy_rate);
        push("max |dS/dt - finite difference|", e, 1e-6, e < 1e-6);
        let fd = finite_difference(&ledger.info, h)?;
        let e = max_abs_diff(&fd, &ledger.info_rate);
        push("max |Idot - finite difference|", e, 1e-6, e < 1e-6);
    }

    if setup.model.is_stable() {
        let ss = solve_lyapunov(setup.model.drift(), setup.model.diffusion())?;
        let a = setup.model.drift();
        let res = linalg::max_abs(&(a * &ss + &ss * a.transpose() + setup.model.diffusion()));
        push("Lyapunov steady-state residual", res, 1e-10, res < 1e-10);
    }
    Ok(checks)
}

/// One-line description used in logs and run summaries.
pub fn describe(scenario: &Scenario) -> String {
    format!(
        "{} / {} (eta = {}, Delta = {}), dt = {}, t_final = {}",
        scenario.model.name(),
        scenario.measurement.preset.name(),
        scenario.measurement.efficiency,
        scenario.measurement.excess_noise,
        scenario.integrator.dt,
        scenario.integrator.t_final
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUENCH: &str = r#"
[model]
kind = "quench"
omega = 1.0
gamma = 0.1
n_th = 49.5
drive_amplitude = 2.0
drive_phase = 0.0

[measurement]
preset = "heterodyne"
efficiency = 1.0
excess_noise = 0.0

[initial]
mean = [1.0, 1.0]
thermal_occupation = 499.5

[integrator]
dt = 1e-3
t_final = 60.0
seed = 1
"#;

    #[test]
    fn quench_file_matches_defaults() {
        let sc = parse_scenario(QUENCH).unwrap();
        assert_eq!(sc, Scenario::quench_default());
        let s0 = sc.initial.state().unwrap();
        assert!((s0.cov() - Mat::identity(2, 2) * 500.0).abs().max() < 1e-12);
    }

    #[test]
    fn minimal_file_uses_model_defaults() {
        let sc = parse_scenario("[model]\nkind = \"opo\"\n[measurement]\npreset = \"homodyne_p\"\n").unwrap();
        assert_eq!(sc, Scenario::opo_default(Preset::HomodyneP));
        assert_eq!(sc.measurement.excess_noise, 0.1);
        assert_eq!(sc.integrator.t_final, 20.0);
    }

    #[test]
    fn empty_measurement_section() {
        let err = parse_scenario("[model]\nkind = \"quench\"\n[measurement]\n").unwrap_err();
        assert!(err.to_string().contains("measurement preset required"), "{err}");
        let err = parse_scenario("[model]\nkind = \"quench\"\n").unwrap_err();
        assert!(err.to_string().contains("measurement preset required"));
    }

    #[test]
    fn negative_s_is_rejected() {
        let text = "[model]\nkind = \"quench\"\n[measurement]\npreset = \"general\"\ns = -1.0\n";
        match parse_scenario(text).unwrap_err() {
            Error::Validation { field, message } => {
                assert_eq!(field, "measurement.s");
                assert!(message.contains("s > 0"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "[model]\nkind = \"quench\"\n\n[measurement]\npreset = \"heterodyne\"\nfrobnicate = 3\n";
        match parse_scenario(text).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("frobnicate"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "[model]\nkind = \"quench\"\ngamma = = 2\n";
        assert!(matches!(parse_scenario(text), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn field_errors_are_named() {
        let cases = [
            ("[model]\nkind = \"opo\"\nomega = 1.0\n[measurement]\npreset = \"heterodyne\"\n", "model.omega"),
            ("[model]\nkind = \"spin\"\n[measurement]\npreset = \"heterodyne\"\n", "model.kind"),
            ("[model]\nkind = \"quench\"\n[measurement]\npreset = \"heterodyne\"\nefficiency = 1.5\n", "measurement.efficiency"),
            ("[model]\nkind = \"quench\"\n[measurement]\npreset = \"bogus\"\n", "measurement.preset"),
            ("[model]\nkind = \"quench\"\n[measurement]\npreset = \"heterodyne\"\n[initial]\nmean = [1.0]\n", "initial.mean"),
            ("[model]\nkind = \"quench\"\n[measurement]\npreset = \"heterodyne\"\n[initial]\ncov = [[0.1, 0.0], [0.0, 0.1]]\n", "initial"),
            ("[model]\nkind = \"quench\"\n[measurement]\npreset = \"heterodyne\"\n[integrator]\ndt = -1.0\n", "integrator"),
        ];
        for (text, expected) in cases {
            match parse_scenario(text) {
                Err(Error::Validation { field, .. }) => assert_eq!(field, expected, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    fn short(mut sc: Scenario) -> Scenario {
        sc.integrator.t_final = 2.0;
        sc.output.ensemble_record_every = 500;
        sc
    }

    #[test]
    fn read_csv_rejects_ragged_and_non_numeric_rows() {
        assert!(matches!(read_csv("a,b\n1,2\n3\n"), Err(Error::Parse { .. })));
        assert!(matches!(read_csv("a,b\n1,2\n3,x\n"), Err(Error::Parse { line: 3, .. })));
        let t = read_csv("a, b\n1, 2.5e0\n").unwrap();
        assert_eq!(t.column("b"), Some(vec![2.5]));
    }

    #[test]
    fn ledger_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sc = short(Scenario::quench_default());
        let res = run(&sc, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
        assert!(text.starts_with("t,S,S_uc,dSdt,Phi_uc,Pi_uc,Idot,I,Pi\n"));
        let table = read_csv(&text).unwrap();
        assert_eq!(table.rows.len(), res.ledger.len());
        for (row, orig) in table.rows.iter().zip(ledger_rows(&res.ledger)) {
            for (a, b) in row.iter().zip(orig) {
                assert!((a - b).abs() <= 5e-12 * b.abs(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn run_is_byte_identical_and_reproducible_from_metadata() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sc = short(Scenario::opo_default(Preset::HomodyneX));
        run(&sc, a.path()).unwrap();
        let meta = fs::read_to_string(a.path().join("run.json")).unwrap();
        let again = Scenario::from_run_metadata(&meta).unwrap();
        assert_eq!(again, sc);
        run(&again, b.path()).unwrap();
        for f in ["ledger.csv", "run.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn unwritable_output_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let sc = short(Scenario::quench_default());
        assert!(matches!(run(&sc, &blocker.join("sub")), Err(Error::Io(_))));
    }

    #[test]
    fn ensemble_rejects_single_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let sc = short(Scenario::quench_default());
        assert!(matches!(ensemble(&sc, 1, dir.path()), Err(Error::Validation { .. })));
    }

    #[test]
    fn ensemble_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut sc = short(Scenario::quench_default());
        sc.output.per_trajectory = true;
        let out = ensemble(&sc, 200, dir.path()).unwrap();
        assert_eq!(out.rows.len(), 5);
        let z = out.zscores.unwrap();
        assert_eq!(z.tests, 4 * 5);
        let table = read_csv(&fs::read_to_string(dir.path().join("ensemble.csv")).unwrap()).unwrap();
        assert_eq!(table.columns, ENSEMBLE_COLUMNS);
        let traj = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
        assert_eq!(traj.lines().count(), 1 + 200 * 5);
        assert!(dir.path().join("zscores.json").exists());
    }

    #[test]
    fn standard_errors_follow_clt() {
        let sc = short(Scenario::quench_default());
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let small = ensemble(&sc, 2000, a.path()).unwrap();
        let large = ensemble(&sc, 4000, b.path()).unwrap();
        let k = small.rows.len() - 1;
        for col in [2, 6] {
            let ratio = large.rows[k][col] / small.rows[k][col];
            assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
        }
    }

    #[test]
    fn validate_table_on_short_run() {
        let mut sc = short(Scenario::opo_default(Preset::Heterodyne));
        sc.integrator.t_final = 1.0;
        let checks = validate(&sc).unwrap();
        let by_name = |n: &str| checks.iter().find(|c| c.name == n).unwrap().clone();
        for n in ["min Pi_uc", "min (Pi - Idot)", "max I", "|I(0)|", "max |sigma + V - sigma_uc|", "max |I + mutual information|"] {
            assert!(by_name(n).pass, "{n}: {:?}", by_name(n));
        }
    }
}
