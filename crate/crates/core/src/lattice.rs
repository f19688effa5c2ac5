//! Smeared mass-density collapse operators on a spatial lattice, the
//! free-particle energy gain they cause, and the closed-form gain rate.
//!
//! States are first-quantized: a fixed number of distinguishable particles,
//! each sitting on a lattice site. A configuration is the tuple of occupied
//! sites, and the smeared density operator `A(x)` is diagonal in the
//! configuration basis with eigenvalue
//!
//! ```text
//!   sum_p (m_p / m0) (pi a^2)^(-d/4) exp(-|x - z_p|^2 / (2 a^2)).
//! ```
//!
//! Dynamics run in model units (`hbar = a = m0 = 1`); see [`UnitSystem`].

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::constants::{HBAR, PROTON_MASS, SPEED_OF_LIGHT};
use crate::error::{CslError, Result};
use crate::hilbert::{c, CMatrix, CVector, DensityMatrix, HermitianOperator, QuantumState, C64};
use crate::master::{step_plan, LindbladModel, MasterIntegrator};
use crate::table::{fmt_num, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Open,
}

/// Lattice geometry, collapse parameters and particle content (SI units).
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeConfig {
    /// Sites per axis.
    pub n_sites: usize,
    /// Spatial dimension, 1 to 3.
    pub n_axes: usize,
    /// Lattice spacing, m.
    pub spacing: f64,
    /// Smearing length `a`, m.
    pub smearing_a: f64,
    /// Collapse rate, 1/s.
    pub lambda: f64,
    /// Reference mass, kg.
    pub m0: f64,
    /// Particle masses, kg.
    pub particle_masses: Vec<f64>,
    pub boundary: Boundary,
}

impl LatticeConfig {
    /// A periodic lattice with the GRW collapse parameters and the proton
    /// mass as reference.
    pub fn grw(n_sites: usize, n_axes: usize, spacing: f64, particle_masses: Vec<f64>) -> Self {
        Self {
            n_sites,
            n_axes,
            spacing,
            smearing_a: crate::constants::GRW_SMEARING,
            lambda: crate::constants::GRW_LAMBDA,
            m0: PROTON_MASS,
            particle_masses,
            boundary: Boundary::Periodic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CslError::InvalidParameter(msg));
        if self.n_sites == 0 {
            return bad("n_sites must be >= 1".into());
        }
        if !(1..=3).contains(&self.n_axes) {
            return bad(format!("n_axes must be 1, 2 or 3, got {}", self.n_axes));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        if !(self.smearing_a > 0.0 && self.smearing_a.is_finite()) {
            return bad(format!("smearing length must be positive, got {}", self.smearing_a));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if [self.m0].iter().chain(&self.particle_masses).any(|&m| m.is_nan() || m <= 0.0) {
            return bad("masses must be positive".into());
        }
        if self.particle_masses.is_empty() {
            return bad("at least one particle is required".into());
        }
        Ok(())
    }

    /// Total number of lattice sites.
    pub fn n_lattice_sites(&self) -> usize {
        self.n_sites.pow(self.n_axes as u32)
    }

    /// Dimension of the configuration space.
    pub fn config_dim(&self) -> usize {
        self.n_lattice_sites().pow(self.particle_masses.len() as u32)
    }

    /// Per-axis integer coordinates of `site` (axis 0 varies fastest).
    pub fn site_coords(&self, site: usize) -> Vec<usize> {
        let mut rest = site;
        (0..self.n_axes)
            .map(|_| {
                let i = rest % self.n_sites;
                rest /= self.n_sites;
                i
            })
            .collect()
    }

    pub fn site_index(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &i| acc * self.n_sites + i)
    }

    /// Squared distance between two sites, using minimum images on a
    /// periodic lattice.
    pub fn distance_sq(&self, x: usize, z: usize) -> f64 {
        let box_len = self.n_sites as f64 * self.spacing;
        self.site_coords(x)
            .into_iter()
            .zip(self.site_coords(z))
            .map(|(i, j)| {
                let mut d = (i as f64 - j as f64) * self.spacing;
                if self.boundary == Boundary::Periodic {
                    d -= box_len * (d / box_len).round();
                }
                d * d
            })
            .sum()
    }

    /// Site occupied by each particle in configuration `index` (particle 0
    /// varies fastest).
    pub fn configuration(&self, index: usize) -> Vec<usize> {
        let n = self.n_lattice_sites();
        let mut rest = index;
        (0..self.particle_masses.len())
            .map(|_| {
                let s = rest % n;
                rest /= n;
                s
            })
            .collect()
    }

    pub fn configuration_index(&self, sites: &[usize]) -> usize {
        let n = self.n_lattice_sites();
        sites.iter().rev().fold(0, |acc, &s| acc * n + s)
    }

    /// `(pi a^2)^(-d/4)`.
    pub fn smearing_norm(&self) -> f64 {
        (PI * self.smearing_a * self.smearing_a).powf(-(self.n_axes as f64) / 4.0)
    }

    /// Eigenvalue of `A(x)` on a configuration given by its occupied sites.
    pub fn density_eigenvalue(&self, x: usize, sites: &[usize]) -> f64 {
        let norm = self.smearing_norm();
        let two_a2 = 2.0 * self.smearing_a * self.smearing_a;
        sites
            .iter()
            .zip(&self.particle_masses)
            .map(|(&z, &m)| (m / self.m0) * norm * (-self.distance_sq(x, z) / two_a2).exp())
            .sum()
    }
}

/// Smeared mass-density operator at lattice site `x`.
pub fn smeared_mass_density(config: &LatticeConfig, x: usize) -> Result<HermitianOperator> {
    config.validate()?;
    if x >= config.n_lattice_sites() {
        return Err(CslError::OutOfRange { index: x, limit: config.n_lattice_sites() });
    }
    let diag: Vec<f64> =
        (0..config.config_dim()).map(|i| config.density_eigenvalue(x, &config.configuration(i))).collect();
    HermitianOperator::from_real_diagonal(&diag)
}

/// Ensemble energy gain rate per particle in three dimensions,
/// `3 hbar^2 lambda m / (4 m0^2 a^2)`, in W.
pub fn energy_gain_rate(m: f64, lambda: f64, a: f64, m0: f64) -> f64 {
    energy_gain_rate_axes(m, lambda, a, m0, 3)
}

/// Energy gain rate with `n_axes` spatial dimensions (one `hbar^2 lambda m /
/// (4 m0^2 a^2)` per axis).
pub fn energy_gain_rate_axes(m: f64, lambda: f64, a: f64, m0: f64, n_axes: usize) -> f64 {
    n_axes as f64 * HBAR * HBAR * lambda * m / (4.0 * m0 * m0 * a * a)
}

/// Energy gained over `t` as a fraction of the rest energy `m c^2`.
pub fn energy_gain_ratio(m: f64, lambda: f64, a: f64, m0: f64, t: f64) -> f64 {
    energy_gain_rate(m, lambda, a, m0) * t / (m * SPEED_OF_LIGHT * SPEED_OF_LIGHT)
}

/// Model units: lengths in `a`, masses in `m0`, `hbar = 1`. The time unit is
/// then `m0 a^2 / hbar` and the energy unit `hbar^2 / (m0 a^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSystem {
    pub length: f64,
    pub mass: f64,
    pub time: f64,
    pub energy: f64,
}

impl UnitSystem {
    pub fn for_lattice(config: &LatticeConfig) -> Self {
        let (l, m) = (config.smearing_a, config.m0);
        let time = m * l * l / HBAR;
        Self { length: l, mass: m, time, energy: HBAR / time }
    }

    /// The same lattice expressed in model units.
    pub fn to_model(&self, config: &LatticeConfig) -> LatticeConfig {
        LatticeConfig {
            n_sites: config.n_sites,
            n_axes: config.n_axes,
            spacing: config.spacing / self.length,
            smearing_a: config.smearing_a / self.length,
            lambda: config.lambda * self.time,
            m0: config.m0 / self.mass,
            particle_masses: config.particle_masses.iter().map(|m| m / self.mass).collect(),
            boundary: config.boundary,
        }
    }
}

impl LatticeConfig {
    /// Sets `lambda` (SI) from a rate expressed in model time units.
    pub fn with_model_lambda(mut self, lambda_model: f64) -> Self {
        self.lambda = lambda_model / UnitSystem::for_lattice(&self).time;
        self
    }
}

/// A Gaussian single-particle wavepacket (SI units).
#[derive(Clone, Debug, PartialEq)]
pub struct Wavepacket {
    /// Center per axis, m.
    pub center: Vec<f64>,
    /// Standard deviation of `|psi|^2` along each axis, m.
    pub width: f64,
    /// Mean wavenumber per axis, 1/m.
    pub wavenumber: Vec<f64>,
}

impl Wavepacket {
    pub fn at_rest(center: Vec<f64>, width: f64) -> Self {
        let n = center.len();
        Self { center, width, wavenumber: vec![0.0; n] }
    }

    /// Normalized lattice state (periodic images wrap the Gaussian).
    pub fn state(&self, config: &LatticeConfig) -> Result<QuantumState> {
        if self.center.len() != config.n_axes || self.wavenumber.len() != config.n_axes {
            return Err(CslError::DimensionMismatch { expected: config.n_axes, found: self.center.len() });
        }
        let box_len = config.n_sites as f64 * config.spacing;
        let amps: Vec<C64> = (0..config.n_lattice_sites())
            .map(|s| {
                let mut log_amp = 0.0;
                let mut phase = 0.0;
                for (axis, i) in config.site_coords(s).into_iter().enumerate() {
                    let mut d = i as f64 * config.spacing - self.center[axis];
                    if config.boundary == Boundary::Periodic {
                        d -= box_len * (d / box_len).round();
                    }
                    log_amp -= d * d / (4.0 * self.width * self.width);
                    phase += self.wavenumber[axis] * d;
                }
                C64::from_polar(log_amp.exp(), phase)
            })
            .collect();
        QuantumState::new(CVector::from_vec(amps))?.normalized()
    }
}

/// Everything needed to integrate a single free particle on the lattice, in
/// model units.
#[derive(Clone, Debug)]
pub struct LatticeProblem {
    pub units: UnitSystem,
    pub model_config: LatticeConfig,
    pub hamiltonian: HermitianOperator,
    pub master: LindbladModel,
    pub rho0: DensityMatrix,
}

/// Nearest-neighbour kinetic energy `-(1 / 2 m s^2) sum_axes (T + T^dagger - 2)`
/// in model units.
pub fn lattice_hamiltonian(model_config: &LatticeConfig) -> Result<HermitianOperator> {
    let n = model_config.n_lattice_sites();
    let mass = model_config.particle_masses[0];
    let hop = 1.0 / (2.0 * mass * model_config.spacing * model_config.spacing);
    let mut h = CMatrix::zeros(n, n);
    for s in 0..n {
        let coords = model_config.site_coords(s);
        for axis in 0..model_config.n_axes {
            h[(s, s)] += c(2.0 * hop);
            let i = coords[axis];
            let next = match (i + 1 < model_config.n_sites, model_config.boundary) {
                (true, _) => Some(i + 1),
                (false, Boundary::Periodic) if model_config.n_sites > 1 => Some(0),
                _ => None,
            };
            if let Some(j) = next {
                let mut nc = coords.clone();
                nc[axis] = j;
                let t = model_config.site_index(&nc);
                if t != s {
                    h[(s, t)] -= c(hop);
                    h[(t, s)] -= c(hop);
                }
            }
        }
    }
    HermitianOperator::new(h)
}

/// Builds the single-particle lattice problem after checking resolution:
/// spacing at most `a/4`, box at least `8a`, wavepacket width at least two
/// spacings.
pub fn lattice_problem(config: &LatticeConfig, packet: &Wavepacket) -> Result<LatticeProblem> {
    config.validate()?;
    if config.particle_masses.len() != 1 {
        return Err(CslError::InvalidParameter("energy gain runs take exactly one particle".into()));
    }
    if config.spacing > config.smearing_a / 4.0 * (1.0 + 1e-12) {
        return Err(CslError::ResolutionViolation(format!(
            "spacing {:e} exceeds a/4 = {:e}",
            config.spacing,
            config.smearing_a / 4.0
        )));
    }
    let box_len = config.n_sites as f64 * config.spacing;
    if box_len < 8.0 * config.smearing_a {
        return Err(CslError::ResolutionViolation(format!("box {box_len:e} is smaller than 8a")));
    }
    if packet.width < 2.0 * config.spacing {
        return Err(CslError::ResolutionViolation(format!(
            "wavepacket width {:e} is below two lattice spacings",
            packet.width
        )));
    }
    let units = UnitSystem::for_lattice(config);
    let mc = units.to_model(config);
    let hamiltonian = lattice_hamiltonian(&mc)?;
    // The spatial integral over x becomes a sum with measure s^d, folded
    // into the channels as sqrt(s^d) A(x).
    let measure = mc.spacing.powi(mc.n_axes as i32).sqrt();
    let channels = (0..mc.n_lattice_sites())
        .map(|x| smeared_mass_density(&mc, x).map(|a| a.scaled(measure)))
        .collect::<Result<Vec<_>>>()?;
    let master = LindbladModel::new(hamiltonian.clone(), channels, mc.lambda)?;
    let model_packet = Wavepacket {
        center: packet.center.iter().map(|x| x / units.length).collect(),
        width: packet.width / units.length,
        wavenumber: packet.wavenumber.iter().map(|k| k * units.length).collect(),
    };
    let rho0 = DensityMatrix::from_state(&model_packet.state(&mc)?)?;
    Ok(LatticeProblem { units, model_config: mc, hamiltonian, master, rho0 })
}

/// Particle energy `Tr(H rho)` along a run, in SI units.
#[derive(Clone, Debug)]
pub struct EnergyTrajectory {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub units: UnitSystem,
}

impl EnergyTrajectory {
    /// Least-squares slope of energy against time, W.
    pub fn slope(&self) -> f64 {
        linear_fit(&self.times, &self.energies).0
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "energy"]);
        for (x, y) in self.times.iter().zip(&self.energies) {
            t.push(vec![fmt_num(*x), fmt_num(*y)]);
        }
        t
    }
}

/// Least-squares `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Number of energy samples recorded by [`numerical_energy_gain`].
pub const ENERGY_RECORDS: usize = 200;

/// Integrates the master equation for one free particle on the lattice and
/// records `Tr(H rho)` (SI units) over `[0, t_final]` seconds.
pub fn numerical_energy_gain(config: &LatticeConfig, packet: &Wavepacket, t_final: f64) -> Result<EnergyTrajectory> {
    let problem = lattice_problem(config, packet)?;
    let units = problem.units;
    let t_model = t_final / units.time;
    let (n, dt) = step_plan(t_model, problem.master.max_dt())?;
    let stride = (n / ENERGY_RECORDS).max(1);
    let mut integ = MasterIntegrator::new(&problem.rho0, &problem.master, dt)?;
    let energy = |m: &CMatrix| crate::hilbert::trace_product(problem.hamiltonian.matrix(), m).re * units.energy;
    let mut times = vec![0.0];
    let mut energies = vec![energy(integ.matrix())];
    for s in 1..=n {
        integ.step();
        if s % stride == 0 || s == n {
            integ.checked_state()?;
            times.push(s as f64 * dt * units.time);
            energies.push(energy(integ.matrix()));
        }
    }
    Ok(EnergyTrajectory { times, energies, units })
}

/// Initial energy-gain rate of the lattice problem computed directly from the
/// dissipator, W.
pub fn lattice_gain_rate(problem: &LatticeProblem) -> Result<f64> {
    let rhs = crate::master::lindblad_rhs(&problem.rho0, &problem.master)?;
    Ok(crate::hilbert::trace_product(problem.hamiltonian.matrix(), &rhs).re * problem.units.energy / problem.units.time)
}

/// Site densities `A(x)` for a configuration, useful for profiles.
pub fn density_profile(config: &LatticeConfig, sites: &[usize]) -> DVector<f64> {
    DVector::from_iterator(
        config.n_lattice_sites(),
        (0..config.n_lattice_sites()).map(|x| config.density_eigenvalue(x, sites)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{GRW_LAMBDA, GRW_SMEARING, UNIVERSE_AGE};

    fn one_particle(n_sites: usize, n_axes: usize) -> LatticeConfig {
        LatticeConfig::grw(n_sites, n_axes, GRW_SMEARING / 4.0, vec![PROTON_MASS])
    }

    #[test]
    fn peak_value_in_three_dimensions() {
        let cfg = one_particle(3, 3);
        let z0 = cfg.site_index(&[1, 1, 1]);
        let a = smeared_mass_density(&cfg, z0).unwrap();
        let peak = (PI * GRW_SMEARING * GRW_SMEARING).powf(-0.75);
        let i = cfg.configuration_index(&[z0]);
        assert!((a.matrix()[(i, i)].re - peak).abs() < 1e-12 * peak);
    }

    #[test]
    fn two_particles_add() {
        let mut cfg = one_particle(5, 1);
        cfg.particle_masses = vec![PROTON_MASS, 2.0 * PROTON_MASS];
        let single = |m: f64, z: usize| {
            let c1 = LatticeConfig { particle_masses: vec![m], ..cfg.clone() };
            c1.density_eigenvalue(2, &[z])
        };
        let both = cfg.density_eigenvalue(2, &[1, 4]);
        assert!((both - single(PROTON_MASS, 1) - single(2.0 * PROTON_MASS, 4)).abs() < 1e-12 * both);
    }

    #[test]
    fn half_width() {
        // Place the site exactly a sqrt(2 ln 2) away by choosing the spacing.
        let a = 1.0;
        let cfg = LatticeConfig {
            n_sites: 4,
            n_axes: 1,
            spacing: a * (2.0 * 2f64.ln()).sqrt(),
            smearing_a: a,
            lambda: 1.0,
            m0: 1.0,
            particle_masses: vec![1.0],
            boundary: Boundary::Open,
        };
        let peak = cfg.density_eigenvalue(0, &[0]);
        let half = cfg.density_eigenvalue(1, &[0]);
        assert!((half / peak - 0.5).abs() < 1e-14);
    }

    #[test]
    fn operators_commute_and_are_nonnegative() {
        let mut cfg = one_particle(4, 1);
        cfg.particle_masses = vec![PROTON_MASS; 2];
        let ops: Vec<_> = (0..4).map(|x| smeared_mass_density(&cfg, x).unwrap()).collect();
        for a in &ops {
            assert!(a.diagonal_entries().unwrap().iter().all(|&v| v >= 0.0));
            for b in &ops {
                assert_eq!(a.commutator_norm(b).unwrap(), 0.0);
            }
        }
        assert!(matches!(smeared_mass_density(&cfg, 4), Err(CslError::OutOfRange { .. })));
    }

    #[test]
    fn translation_equivariance() {
        let cfg = one_particle(8, 2);
        let z = cfg.site_index(&[2, 3]);
        let shifted = cfg.site_index(&[5, 4]);
        for x in 0..cfg.n_lattice_sites() {
            let c = cfg.site_coords(x);
            let xs = cfg.site_index(&[(c[0] + 3) % 8, (c[1] + 1) % 8]);
            assert_eq!(cfg.density_eigenvalue(x, &[z]), cfg.density_eigenvalue(xs, &[shifted]));
        }
    }

    #[test]
    fn gain_rate_constants() {
        assert_eq!(energy_gain_rate(PROTON_MASS, 0.0, GRW_SMEARING, PROTON_MASS), 0.0);
        let r = energy_gain_rate(PROTON_MASS, GRW_LAMBDA, GRW_SMEARING, PROTON_MASS);
        // 3 hbar^2 lambda / (4 m0 a^2), evaluated by hand: 4.987e-44 W.
        assert!((r - 4.987e-44).abs() < 0.001e-44, "{r:e}");
        let ratio = energy_gain_ratio(PROTON_MASS, GRW_LAMBDA, GRW_SMEARING, PROTON_MASS, UNIVERSE_AGE);
        assert!(ratio > 1e-16 / 3.0 && ratio < 3e-16, "{ratio:e}");
    }

    #[test]
    fn resolution_checks() {
        let cfg = LatticeConfig::grw(64, 1, GRW_SMEARING / 2.0, vec![PROTON_MASS]);
        let p = Wavepacket::at_rest(vec![16.0 * GRW_SMEARING], GRW_SMEARING);
        assert!(matches!(lattice_problem(&cfg, &p), Err(CslError::ResolutionViolation(_))));
        let cfg = LatticeConfig::grw(16, 1, GRW_SMEARING / 4.0, vec![PROTON_MASS]);
        assert!(matches!(lattice_problem(&cfg, &p), Err(CslError::ResolutionViolation(_))));
    }

    #[test]
    fn no_collapse_conserves_energy() {
        let cfg = LatticeConfig::grw(32, 1, GRW_SMEARING / 4.0, vec![PROTON_MASS]).with_model_lambda(0.0);
        let p =
            Wavepacket { center: vec![4.0 * GRW_SMEARING], width: GRW_SMEARING, wavenumber: vec![0.5 / GRW_SMEARING] };
        let units = UnitSystem::for_lattice(&cfg);
        let traj = numerical_energy_gain(&cfg, &p, 1.0 * units.time).unwrap();
        let e0 = traj.energies[0];
        for e in &traj.energies {
            assert!((e - e0).abs() <= 1e-9 * e0.abs());
        }
    }

    #[test]
    fn model_units_round_trip() {
        let cfg = LatticeConfig::grw(8, 1, GRW_SMEARING / 4.0, vec![PROTON_MASS]).with_model_lambda(0.3);
        let u = UnitSystem::for_lattice(&cfg);
        let m = u.to_model(&cfg);
        assert!((m.lambda - 0.3).abs() < 1e-12);
        assert!((m.spacing - 0.25).abs() < 1e-15);
        assert!((m.smearing_a - 1.0).abs() < 1e-15);
        assert!((m.particle_masses[0] - 1.0).abs() < 1e-15);
    }
}
