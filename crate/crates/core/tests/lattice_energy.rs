use csl_core::constants::{GRW_SMEARING, PROTON_MASS};
use csl_core::lattice::{
    energy_gain_rate_axes, lattice_gain_rate, lattice_problem, linear_fit, numerical_energy_gain, LatticeConfig,
    UnitSystem, Wavepacket,
};

const N: usize = 64;

fn config(lambda_model: f64, mass_ratio: f64) -> LatticeConfig {
    LatticeConfig::grw(N, 1, GRW_SMEARING / 4.0, vec![mass_ratio * PROTON_MASS]).with_model_lambda(lambda_model)
}

fn packet(width: f64) -> Wavepacket {
    Wavepacket::at_rest(vec![8.0 * GRW_SMEARING], width * GRW_SMEARING)
}

fn slope(lambda_model: f64, mass_ratio: f64, width: f64) -> (f64, f64) {
    let cfg = config(lambda_model, mass_ratio);
    let u = UnitSystem::for_lattice(&cfg);
    let traj = numerical_energy_gain(&cfg, &packet(width), 2.0 * u.time).unwrap();
    let expected = energy_gain_rate_axes(mass_ratio * PROTON_MASS, cfg.lambda, GRW_SMEARING, PROTON_MASS, 1);
    (traj.slope(), expected)
}

/// Initial energy rate from the closed-form coherence decay under the
/// collapse term alone, rho_ij(t) = rho_ij(0) exp(-lambda t Gamma_ij / 2),
/// built here from scratch in model units (a = m0 = hbar = 1).
fn coherence_decay_rate(lambda: f64, spacing: f64, width: f64, center: f64) -> f64 {
    let box_len = N as f64 * spacing;
    let wrap = |d: f64| d - box_len * (d / box_len).round();
    let smear = |x: usize, i: usize| {
        let d = wrap((x as f64 - i as f64) * spacing);
        std::f64::consts::PI.powf(-0.25) * (-0.5 * d * d).exp()
    };
    let psi: Vec<f64> = (0..N)
        .map(|i| {
            let d = wrap(i as f64 * spacing - center);
            (-d * d / (4.0 * width * width)).exp()
        })
        .collect();
    let norm: f64 = psi.iter().map(|p| p * p).sum();
    let hop = 1.0 / (2.0 * spacing * spacing);
    let mut rate = 0.0;
    for i in 0..N {
        for j in [(i + 1) % N, (i + N - 1) % N] {
            let gamma: f64 = (0..N).map(|x| spacing * (smear(x, i) - smear(x, j)).powi(2)).sum();
            // H_ji = -hop on nearest neighbours.
            rate += -0.5 * lambda * gamma * (-hop) * psi[i] * psi[j] / norm;
        }
    }
    rate
}

#[test]
fn initial_rate_matches_coherence_decay_oracle() {
    let cfg = config(0.1, 1.0);
    let problem = lattice_problem(&cfg, &packet(1.0)).unwrap();
    let u = problem.units;
    let got = lattice_gain_rate(&problem).unwrap() / (u.energy / u.time);
    let oracle = coherence_decay_rate(0.1, 0.25, 1.0, 8.0);
    assert!((got - oracle).abs() < 1e-10 * oracle, "{got} vs {oracle}");
    // The continuum rate per axis in model units is lambda / 4.
    assert!((oracle / 0.025 - 1.0).abs() < 0.1);
}

#[test]
fn slope_matches_one_dimensional_rate() {
    let (s, expected) = slope(0.1, 1.0, 1.0);
    assert!((s / expected - 1.0).abs() < 0.1, "{s:e} vs {expected:e}");
}

#[test]
fn slope_is_linear_in_lambda_and_mass() {
    let lambdas = [0.05, 0.1, 0.2];
    let slopes: Vec<f64> = lambdas.iter().map(|&l| slope(l, 1.0, 1.0).0).collect();
    let phys: Vec<f64> = lambdas.iter().map(|&l| config(l, 1.0).lambda).collect();
    let (k, b) = linear_fit(&phys, &slopes);
    for (x, y) in phys.iter().zip(&slopes) {
        assert!(((k * x + b) - y).abs() < 0.02 * y.abs());
    }
    // Heavier particles gain proportionally more (lambda held fixed).
    let masses = [1.0, 2.0, 4.0];
    let by_mass: Vec<f64> = masses.iter().map(|&m| slope(0.1, m, 1.0).0).collect();
    let (k, b) = linear_fit(&masses, &by_mass);
    for (x, y) in masses.iter().zip(&by_mass) {
        assert!(((k * x + b) - y).abs() < 0.02 * y.abs());
    }
}

#[test]
fn slope_independent_of_width() {
    let (narrow, _) = slope(0.1, 1.0, 1.0);
    let (wide, _) = slope(0.1, 1.0, 2.0);
    assert!((narrow / wide - 1.0).abs() < 0.05);
}
