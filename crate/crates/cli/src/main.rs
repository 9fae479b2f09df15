use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaussmon::scenario::{self, Preset, Scenario};
use gaussmon::validation::{riccati_steady_state, solve_lyapunov, SteadyStateOptions};
use gaussmon::Error;

#[derive(Parser)]
#[command(name = "gaussmon", version, about = "Entropy production of continuously monitored Gaussian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the moments and write ledger.csv and run.json
    Run(Common),
    /// Average stochastic flux and production over many trajectories
    Ensemble(Common),
    /// Conditional and unconditional steady-state covariances
    SteadyState(Common),
    /// Run the scenario and print the invariant table
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML) or a run.json from a previous run
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override integrator.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override integrator.dt
    #[arg(long)]
    dt: Option<f64>,
    /// Override integrator.t_final
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Override integrator.trajectories (ensemble only)
    #[arg(long)]
    trajectories: Option<usize>,
    /// homodyne_x, homodyne_p or heterodyne
    #[arg(long)]
    preset: Option<String>,
}

impl Common {
    fn scenario(&self) -> gaussmon::Result<Scenario> {
        let mut sc = Scenario::load(&self.scenario)?;
        if let Some(seed) = self.seed {
            sc.integrator.seed = seed;
        }
        if let Some(dt) = self.dt {
            sc.integrator.dt = dt;
        }
        if let Some(t) = self.t_final {
            sc.integrator.t_final = t;
        }
        if let Some(n) = self.trajectories {
            sc.integrator.trajectories = n;
        }
        if let Some(p) = &self.preset {
            sc.measurement.preset = Preset::from_name(p)?;
        }
        sc.validate()?;
        Ok(sc)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Serialization(_) => 2,
        Error::IntegrationFailure { .. } | Error::NoSteadyState(_) => 3,
        _ => 1,
    }
}

fn write_json(out: &Path, name: &str, value: &serde_json::Value) -> gaussmon::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn matrix_json(m: &gaussmon::Mat) -> serde_json::Value {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect::<Vec<f64>>())
        .collect::<Vec<_>>()
        .into()
}

fn execute(cmd: &Command) -> gaussmon::Result<bool> {
    match cmd {
        Command::Run(c) => {
            let sc = c.scenario()?;
            eprintln!("run: {}", scenario::describe(&sc));
            let res = scenario::run(&sc, &c.out)?;
            let l = &res.ledger;
            println!(
                "wrote {} rows to {}; final I = {}, Pi = {}",
                l.len(),
                c.out.join("ledger.csv").display(),
                scenario::fmt_num(*l.info.last().unwrap()),
                scenario::fmt_num(*l.prod.last().unwrap())
            );
            Ok(true)
        }
        Command::Ensemble(c) => {
            let sc = c.scenario()?;
            let n = sc.integrator.trajectories;
            eprintln!("ensemble: {} trajectories, {}", n, scenario::describe(&sc));
            let res = scenario::ensemble(&sc, n, &c.out)?;
            if !res.failures.is_empty() {
                eprintln!("{} trajectories failed, first: {:?}", res.failures.len(), res.failures[0]);
            }
            match &res.zscores {
                Some(z) => println!(
                    "wrote {}; {} z-tests, {} outside |z| < {}, max |z| = {:.2}",
                    c.out.join("ensemble.csv").display(),
                    z.tests,
                    z.failed,
                    z.gate,
                    z.max_abs_z
                ),
                None => println!(
                    "wrote {}; fewer than 100 trajectories, no z-scores",
                    c.out.join("ensemble.csv").display()
                ),
            }
            Ok(true)
        }
        Command::SteadyState(c) => {
            let sc = c.scenario()?;
            let setup = sc.setup()?;
            let opts = SteadyStateOptions::default();
            let cond = riccati_steady_state(&setup.model, &setup.monitoring, setup.state0.cov(), &opts)?;
            let uncond = solve_lyapunov(setup.model.drift(), setup.model.diffusion());
            let value = serde_json::json!({
                "conditional": cond,
                "unconditional": uncond.as_ref().ok().map(matrix_json),
                "unconditional_error": uncond.as_ref().err().map(|e| e.to_string()),
            });
            write_json(&c.out, "steady_state.json", &value)?;
            println!("{}", serde_json::to_string_pretty(&value)?);
            uncond?;
            if !cond.converged {
                return Err(Error::NoSteadyState(format!(
                    "conditional residual {:.3e} after t = {}",
                    cond.residual, cond.horizon
                )));
            }
            Ok(true)
        }
        Command::Validate(c) => {
            let sc = c.scenario()?;
            eprintln!("validate: {}", scenario::describe(&sc));
            let checks = scenario::validate(&sc)?;
            let mut ok = true;
            for ch in &checks {
                ok &= ch.pass;
                println!(
                    "{}  {:<36} {:>14.6e}  (tol {:.0e})",
                    if ch.pass { "PASS" } else { "FAIL" },
                    ch.name,
                    ch.value,
                    ch.tolerance
                );
            }
            write_json(&c.out, "validate.json", &serde_json::to_value(&checks)?)?;
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
