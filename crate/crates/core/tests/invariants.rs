use gaussmon::linalg;
use gaussmon::scenario::{compute, ModelSpec, Preset, Scenario};
use proptest::prelude::*;

fn preset() -> impl Strategy<Value = Preset> {
    prop_oneof![
        Just(Preset::HomodyneX),
        Just(Preset::HomodyneP),
        Just(Preset::Heterodyne),
        (0.05f64..20.0, -3.0f64..3.0).prop_map(|(s, angle)| Preset::General { s, angle }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ledger_invariants_on_random_quenches(
        omega in 0.2f64..3.0,
        gamma in 0.05f64..1.0,
        n_th in 0.0f64..20.0,
        drive in 0.0f64..3.0,
        hot in 1.0f64..20.0,
        eta in 0.1f64..=1.0,
        delta in 0.0f64..2.0,
        p in preset(),
    ) {
        let mut sc = Scenario::quench_default();
        sc.model = ModelSpec::Quench { omega, gamma, n_th, drive_amplitude: drive, drive_phase: 0.3 };
        sc.measurement.preset = p;
        sc.measurement.efficiency = eta;
        sc.measurement.excess_noise = delta;
        sc.initial.cov = gaussmon::scenario::InitialCov::Thermal { occupation: hot * (n_th + 0.5) };
        sc.integrator.dt = 1e-2;
        sc.integrator.t_final = 5.0;
        sc.output.ensemble_record_every = 100;
        let run = compute(&sc).unwrap();
        let (s, l) = (&run.series, &run.ledger);
        for k in 0..l.len() {
            prop_assert!(l.prod_uc[k] >= -1e-9);
            prop_assert!(l.info[k] <= 1e-9);
            prop_assert!((l.prod[k] - l.prod_uc[k] - l.info_rate[k]).abs() < 1e-9 * (1.0 + l.prod[k].abs()));
            let gap = linalg::max_abs(&(&s.cov[k] + &s.noise_cov[k] - &s.cov_uc[k]));
            prop_assert!(gap < 1e-8 * (1.0 + linalg::max_abs(&s.cov_uc[k])));
            // conditioning never heats: det σ ≤ det σ_uc
            prop_assert!(s.cov[k].determinant() <= s.cov_uc[k].determinant() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn monitoring_less_means_closer_to_unconditional(eta_lo in 0.05f64..0.5, bump in 0.1f64..0.5) {
        let eta_hi = eta_lo + bump;
        let dist = |eta: f64| {
            let mut sc = Scenario::opo_default(Preset::Heterodyne);
            sc.measurement.efficiency = eta;
            sc.integrator.dt = 1e-2;
            sc.integrator.t_final = 5.0;
            sc.output.ensemble_record_every = 100;
            let run = compute(&sc).unwrap();
            let k = run.series.times.len() - 1;
            linalg::max_abs(&(&run.series.cov_uc[k] - &run.series.cov[k]))
        };
        prop_assert!(dist(eta_lo) < dist(eta_hi));
    }
}
