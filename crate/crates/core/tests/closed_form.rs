//! Isotropic heterodyne quench: with σ = s·I the conditional Riccati equation
//! reduces to δ' = −γδ − γδ²/(n+1) for δ = s − (n + ½), solvable in closed form.

use gaussmon::scenario::{compute, Scenario};

const GAMMA: f64 = 0.1;
const N_TH: f64 = 49.5;

fn delta_cond(t: f64, d0: f64) -> f64 {
    let e = (-GAMMA * t).exp();
    let k = N_TH + 1.0;
    d0 * e / (1.0 + d0 / k * (1.0 - e))
}

#[test]
fn heterodyne_quench_matches_closed_form() {
    let sc = Scenario::quench_default();
    let run = compute(&sc).unwrap();
    let sb = N_TH + 0.5;
    let d0 = 500.0 - sb;
    for k in (0..run.series.times.len()).step_by(5000) {
        let t = run.series.times[k];
        let s = sb + delta_cond(t, d0);
        let s_uc = sb + d0 * (-GAMMA * t).exp();
        let cov = &run.series.cov[k];
        assert!((cov[(0, 0)] - s).abs() < 1e-9 * s, "t = {t}");
        assert!(cov[(0, 1)].abs() < 1e-12);
        assert!((run.series.cov_uc[k][(1, 1)] - s_uc).abs() < 1e-9 * s_uc);
        let info = (s / s_uc).ln();
        assert!((run.ledger.info[k] - info).abs() < 1e-9, "t = {t}");
    }
    // the transient is still visible at t = 60
    let last = *run.ledger.info.last().unwrap();
    assert!((last - (50.0 + delta_cond(60.0, d0)).ln() + (50.0 + d0 * (-6.0f64).exp()).ln()).abs() < 1e-9);
    assert!(last < -0.019 && last > -0.021);
}

#[test]
fn hot_start_rates() {
    // zero mean isolates the covariance contributions
    let mut sc = Scenario::quench_default();
    sc.initial.mean = vec![0.0, 0.0];
    sc.model = gaussmon::scenario::ModelSpec::Quench {
        omega: 1.0,
        gamma: GAMMA,
        n_th: N_TH,
        drive_amplitude: 0.0,
        drive_phase: 0.0,
    };
    sc.integrator.t_final = 0.01;
    sc.output.ensemble_record_every = 1;
    let run = compute(&sc).unwrap();
    let l = &run.ledger;
    assert!((l.flux_uc[0] + 0.9).abs() < 1e-12);
    assert!((l.prod_uc[0] - 0.81).abs() < 1e-12);
    assert!((l.entropy_rate_uc[0] + 0.09).abs() < 1e-12);
}
