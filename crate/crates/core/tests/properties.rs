use csl_core::cosmogenesis::{mean_n_csl, mean_n_schrodinger, moment_ode_oracle, CosmoParams};
use csl_core::hilbert::{CMatrix, DensityMatrix, HermitianOperator, QuantumState};
use csl_core::ledger::{attribute_energy_change, run_ledger};
use csl_core::master::LindbladModel;
use csl_core::C64;
use proptest::prelude::*;

fn cosmo(m: f64, g: f64, lambda: f64, t: f64) -> CosmoParams {
    CosmoParams { m, g, cells: 2, lambda, total_time: t, n_max: 8 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_form_agrees_with_moment_equations(m in 0.2f64..3.0, g in 0.01f64..0.5, lambda in 0.0f64..5.0, t in 0.1f64..15.0) {
        let p = cosmo(m, g, lambda, t);
        let oracle = moment_ode_oracle(&p, 1).unwrap().final_n();
        let exact = mean_n_csl(&p);
        prop_assert!((oracle - exact).abs() <= 1e-8 * exact.abs().max(1e-12 * g * g), "{} vs {}", oracle, exact);
        prop_assert!(exact >= -1e-15);
    }

    #[test]
    fn zero_rate_is_the_schrodinger_limit(m in 0.2f64..3.0, g in 0.01f64..0.5, t in 0.0f64..15.0) {
        let p = cosmo(m, g, 0.0, t);
        prop_assert!((mean_n_csl(&p) - mean_n_schrodinger(&p)).abs() <= 1e-10 * (g / m).powi(2));
    }

    #[test]
    fn attribution_sums_to_delta(delta in -5.0f64..5.0, c in prop::collection::vec(0.0f64..1.0, 1..12)) {
        let d = attribute_energy_change(delta, &c);
        let total: f64 = c.iter().sum();
        if total > 1e-9 {
            prop_assert!((d.iter().sum::<f64>() - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn ledger_conserves_total_energy(
        h in prop::collection::vec(-1.0f64..1.0, 6),
        a in prop::collection::vec(-1.0f64..1.0, 3),
        lambda in 0.0f64..2.0,
    ) {
        let mut hm = CMatrix::zeros(3, 3);
        hm[(0, 0)] = C64::new(h[0], 0.0);
        hm[(1, 1)] = C64::new(h[1], 0.0);
        hm[(2, 2)] = C64::new(h[2], 0.0);
        hm[(0, 1)] = C64::new(h[3], h[4]);
        hm[(1, 0)] = C64::new(h[3], -h[4]);
        hm[(1, 2)] = C64::new(h[5], 0.0);
        hm[(2, 1)] = C64::new(h[5], 0.0);
        let ops = a.iter().enumerate().map(|(k, &v)| {
            let mut d = [0.0; 3];
            d[k] = v;
            HermitianOperator::from_real_diagonal(&d).unwrap()
        }).collect();
        let model = LindbladModel::new(HermitianOperator::new(hm).unwrap(), ops, lambda).unwrap();
        let psi = QuantumState::from_real(&[0.5, 0.5, 0.5f64.sqrt()]).unwrap();
        let run = run_ledger(&DensityMatrix::from_state(&psi).unwrap(), &model, 2.0, 50).unwrap();
        prop_assert!(run.max_conservation_error() < 1e-9);
        let e0 = run.records[0].particle_energy;
        for r in &run.records {
            if r.particle_energy >= e0 {
                prop_assert!(r.w_density_sum <= 1e-12);
            }
        }
    }
}
