//! Universe creation from vacuum: `V` independent cells, each a displaced
//! oscillator `H = m N + g (xi + xi^dagger)` on a truncated Fock space, with
//! the cell number operator `N = xi^dagger xi` as collapse channel.

use std::f64::consts::PI;

use num_complex::Complex;
use serde::Serialize;

use crate::error::{CslError, Result};
use crate::hilbert::{c, CMatrix, CVector, DensityMatrix, HermitianOperator, QuantumState, C64};
use crate::master::{step_plan, LindbladModel, MasterIntegrator};
use crate::table::{fmt_num, Table};

/// Occupancy of the top Fock level below which a truncation is adequate.
pub const TRUNCATION_TOL: f64 = 1e-8;
/// Occupancy of the top Fock level at which a run is abandoned.
pub const TRUNCATION_ABORT: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CosmoParams {
    /// Oscillator frequency (particle mass).
    pub m: f64,
    pub g: f64,
    /// Number of cells.
    pub cells: usize,
    pub lambda: f64,
    pub total_time: f64,
    /// Highest Fock level kept per cell.
    pub n_max: usize,
}

impl CosmoParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CslError::InvalidParameter(msg));
        if !(self.m > 0.0 && self.m.is_finite()) {
            return bad(format!("m must be positive, got {}", self.m));
        }
        if !self.g.is_finite() {
            return bad(format!("g must be finite, got {}", self.g));
        }
        if self.cells == 0 {
            return bad("cells must be >= 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.total_time >= 0.0 && self.total_time.is_finite()) {
            return bad(format!("total_time must be >= 0, got {}", self.total_time));
        }
        if self.n_max == 0 {
            return bad("n_max must be >= 1".into());
        }
        Ok(())
    }

    pub fn fock_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_time(&self, total_time: f64) -> Self {
        Self { total_time, ..self.clone() }
    }
}

/// Annihilation operator on Fock levels `0..=n_max`.
pub fn annihilation(n_max: usize) -> CMatrix {
    let d = n_max + 1;
    let mut a = CMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = c((n as f64).sqrt());
    }
    a
}

pub fn number_operator(n_max: usize) -> HermitianOperator {
    let diag: Vec<f64> = (0..=n_max).map(|n| n as f64).collect();
    HermitianOperator::from_real_diagonal(&diag).expect("finite diagonal")
}

/// `H = m N + g (xi + xi^dagger)` for one cell.
pub fn cell_hamiltonian(params: &CosmoParams) -> Result<HermitianOperator> {
    params.validate()?;
    let a = annihilation(params.n_max);
    let n = number_operator(params.n_max);
    let h = n.matrix() * c(params.m) + (&a + a.adjoint()) * c(params.g);
    HermitianOperator::new(h)
}

/// Single-cell master-equation model with the number operator as channel.
pub fn cell_model(params: &CosmoParams) -> Result<LindbladModel> {
    LindbladModel::new(cell_hamiltonian(params)?, vec![number_operator(params.n_max)], params.lambda)
}

/// Coherent amplitude reached from vacuum after `T`: `-(g/m)(1 - e^{-imT})`.
pub fn coherent_amplitude(params: &CosmoParams) -> C64 {
    let beta = params.g / params.m;
    -(Complex::new(1.0, 0.0) - Complex::from_polar(1.0, -params.m * params.total_time)) * beta
}

#[derive(Clone, Debug)]
pub struct CoherentSolution {
    /// Single-cell state, including the single-cell phase `e^{iTg^2/m}`.
    pub state: QuantumState,
    pub alpha: C64,
    /// Phase `T g^2 V / m` of the full `V`-cell state.
    pub global_phase: f64,
    pub top_occupancy: f64,
}

/// Closed-form single-cell Schrödinger solution on the truncated Fock space.
pub fn coherent_solution(params: &CosmoParams) -> Result<CoherentSolution> {
    params.validate()?;
    let beta = params.g / params.m;
    let t = params.total_time;
    let alpha = coherent_amplitude(params);
    let one_minus = Complex::new(1.0, 0.0) - Complex::from_polar(1.0, -params.m * t);
    let prefactor = Complex::from_polar(1.0, t * params.g * beta) * (-(one_minus * beta * beta)).exp();
    let mut amps = Vec::with_capacity(params.fock_dim());
    let mut term = prefactor;
    for n in 0..=params.n_max {
        if n > 0 {
            term *= alpha / (n as f64).sqrt();
        }
        amps.push(term);
    }
    let state = QuantumState::new(CVector::from_vec(amps))?.normalized()?;
    let top_occupancy = state.amplitudes()[params.n_max].norm_sqr();
    if top_occupancy > TRUNCATION_TOL {
        return Err(CslError::TruncationOverflow { occupancy: top_occupancy, limit: TRUNCATION_TOL });
    }
    Ok(CoherentSolution { state, alpha, global_phase: t * params.g * beta * params.cells as f64, top_occupancy })
}

/// Schrödinger mean particle number, `2 V (g/m)^2 (1 - cos mT)`.
pub fn mean_n_schrodinger(params: &CosmoParams) -> f64 {
    let beta = params.g / params.m;
    2.0 * params.cells as f64 * beta * beta * (1.0 - (params.m * params.total_time).cos())
}

/// Mean particle number under collapse:
/// `g^2 V / (m^2 + (lambda/2)^2) {lambda T - 2 [cos th - e^{-lambda T/2} cos(th + mT)]}`
/// with `th = 2 atan(2m / lambda)` (equal to `pi` at `lambda = 0`).
pub fn mean_n_csl(params: &CosmoParams) -> f64 {
    let (m, g, l, t) = (params.m, params.g, params.lambda, params.total_time);
    let theta = 2.0 * (2.0 * m).atan2(l);
    let braces = l * t - 2.0 * (theta.cos() - (-0.5 * l * t).exp() * (theta + m * t).cos());
    g * g * params.cells as f64 / (m * m + 0.25 * l * l) * braces
}

/// Large-time growth rate of the mean particle number,
/// `lambda g^2 V / (m^2 + (lambda/2)^2)`.
pub fn asymptotic_slope(params: &CosmoParams) -> f64 {
    let (m, g, l) = (params.m, params.g, params.lambda);
    l * g * g * params.cells as f64 / (m * m + 0.25 * l * l)
}

/// Long-time limit of `<xi>`, `-i g / (i m + lambda/2)`.
pub fn xi_fixed_point(params: &CosmoParams) -> C64 {
    Complex::new(0.0, -params.g) / Complex::new(0.5 * params.lambda, params.m)
}

/// Mean particle number along a run.
#[derive(Clone, Debug, Default)]
pub struct CosmoTrajectory {
    pub times: Vec<f64>,
    /// Total over all cells.
    pub n_mean: Vec<f64>,
    /// Single-cell `<xi>`.
    pub xi_mean: Vec<C64>,
    pub max_top_occupancy: f64,
    pub truncation_adequate: bool,
}

impl CosmoTrajectory {
    pub fn final_n(&self) -> f64 {
        *self.n_mean.last().expect("trajectory has at least one record")
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "n_mean", "xi_re", "xi_im"]);
        for ((time, n), xi) in self.times.iter().zip(&self.n_mean).zip(&self.xi_mean) {
            t.push(vec![fmt_num(*time), fmt_num(*n), fmt_num(xi.re), fmt_num(xi.im)]);
        }
        t
    }
}

/// Integrates the single-cell master equation from vacuum and reports
/// `V Tr(N rho)`, recording roughly `n_records` points.
pub fn mean_n_numerical(params: &CosmoParams, n_records: usize) -> Result<CosmoTrajectory> {
    let model = cell_model(params)?;
    let d = params.fock_dim();
    let rho0 = DensityMatrix::from_state(&QuantumState::basis(d, 0)?)?;
    let (n, dt) = step_plan(params.total_time, model.max_dt())?;
    let stride = (n / n_records.max(1)).max(1);
    let a = annihilation(params.n_max);
    let v = params.cells as f64;
    let mut integ = MasterIntegrator::new(&rho0, &model, dt)?;
    let mut out = CosmoTrajectory::default();
    let record = |rho: &CMatrix, time: f64, out: &mut CosmoTrajectory| -> Result<()> {
        let top = rho[(params.n_max, params.n_max)].re;
        if top > TRUNCATION_ABORT {
            return Err(CslError::TruncationOverflow { occupancy: top, limit: TRUNCATION_ABORT });
        }
        out.max_top_occupancy = out.max_top_occupancy.max(top);
        let n_mean: f64 = (0..d).map(|k| k as f64 * rho[(k, k)].re).sum();
        out.times.push(time);
        out.n_mean.push(v * n_mean);
        out.xi_mean.push(crate::hilbert::trace_product(&a, rho));
        Ok(())
    };
    record(integ.matrix(), 0.0, &mut out)?;
    for s in 1..=n {
        integ.step();
        if s % stride == 0 || s == n {
            integ.checked_state()?;
            record(integ.matrix(), s as f64 * dt, &mut out)?;
        }
    }
    out.truncation_adequate = out.max_top_occupancy < TRUNCATION_TOL;
    Ok(out)
}

/// Like [`mean_n_numerical`] but records exactly at the given increasing
/// `times` (`params.total_time` is ignored). Each interval between
/// consecutive times gets its own uniform step.
pub fn mean_n_numerical_at(params: &CosmoParams, times: &[f64]) -> Result<CosmoTrajectory> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(CslError::InvalidParameter("times must be non-negative and increasing".into()));
    }
    let model = cell_model(params)?;
    let d = params.fock_dim();
    let a = annihilation(params.n_max);
    let mut rho = DensityMatrix::from_state(&QuantumState::basis(d, 0)?)?;
    let mut out = CosmoTrajectory::default();
    let mut now = 0.0;
    for &t in times {
        let (n, dt) = step_plan(t - now, model.max_dt())?;
        if n > 0 {
            let mut integ = MasterIntegrator::new(&rho, &model, dt)?;
            for _ in 0..n {
                integ.step();
            }
            rho = integ.checked_state()?;
        }
        now = t;
        let m = rho.matrix();
        let top = m[(params.n_max, params.n_max)].re;
        if top > TRUNCATION_ABORT {
            return Err(CslError::TruncationOverflow { occupancy: top, limit: TRUNCATION_ABORT });
        }
        out.max_top_occupancy = out.max_top_occupancy.max(top);
        out.times.push(t);
        out.n_mean.push(params.cells as f64 * (0..d).map(|k| k as f64 * m[(k, k)].re).sum::<f64>());
        out.xi_mean.push(crate::hilbert::trace_product(&a, m));
    }
    out.truncation_adequate = out.max_top_occupancy < TRUNCATION_TOL;
    Ok(out)
}

/// `|kappa| dt` bound for the moment-equation integrator.
const MOMENT_STEP: f64 = 2e-3;

/// Integrates the closed equations for `<xi>` and `<N>` implied by the master
/// equation,
///
/// ```text
///   d<xi>/dt = -(i m + lambda/2) <xi> - i g
///   d<N>/dt  = -2 g Im<xi>
/// ```
///
/// with classical RK4 from vacuum. Returns `V <N>` on a uniform grid of
/// `n_records + 1` points.
pub fn moment_ode_oracle(params: &CosmoParams, n_records: usize) -> Result<CosmoTrajectory> {
    params.validate()?;
    let kappa = Complex::new(0.5 * params.lambda, params.m);
    let ig = Complex::new(0.0, params.g);
    let rhs = |xi: C64| -> (C64, f64) { (-kappa * xi - ig, -2.0 * params.g * xi.im) };
    let n_records = n_records.max(1);
    let per_record = ((params.total_time / n_records as f64) * kappa.norm() / MOMENT_STEP).ceil().max(1.0) as usize;
    let dt = params.total_time / (n_records * per_record) as f64;
    let (mut xi, mut n) = (Complex::new(0.0, 0.0), 0.0);
    let v = params.cells as f64;
    let mut out = CosmoTrajectory { truncation_adequate: true, ..Default::default() };
    out.times.push(0.0);
    out.n_mean.push(0.0);
    out.xi_mean.push(xi);
    for r in 1..=n_records {
        for _ in 0..per_record {
            let (k1, l1) = rhs(xi);
            let (k2, l2) = rhs(xi + k1 * (0.5 * dt));
            let (k3, l3) = rhs(xi + k2 * (0.5 * dt));
            let (k4, l4) = rhs(xi + k3 * dt);
            xi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            n += (l1 + 2.0 * l2 + 2.0 * l3 + l4) * dt / 6.0;
        }
        out.times.push(r as f64 * per_record as f64 * dt);
        out.n_mean.push(v * n);
        out.xi_mean.push(xi);
    }
    Ok(out)
}

/// Time of one full oscillation, `2 pi / m`.
pub fn period(params: &CosmoParams) -> f64 {
    2.0 * PI / params.m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::DensityMatrix;

    fn params(lambda: f64, t: f64) -> CosmoParams {
        CosmoParams { m: 1.0, g: 0.1, cells: 3, lambda, total_time: t, n_max: 16 }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn vacuum_at_zero_and_full_period() {
        let s = coherent_solution(&params(0.0, 0.0)).unwrap();
        assert!((s.state.amplitudes()[0] - c(1.0)).norm() < 1e-15);
        let p = params(0.0, 2.0 * PI);
        let s = coherent_solution(&p).unwrap();
        assert!(s.alpha.norm() < 1e-15);
        assert!((s.state.amplitudes()[0].norm() - 1.0).abs() < 1e-14);
        assert!((s.global_phase - 2.0 * PI * 0.01 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn coherent_state_matches_propagator() {
        let p = CosmoParams { m: 1.3, g: 0.4, cells: 1, lambda: 0.0, total_time: 2.1, n_max: 30 };
        let s = coherent_solution(&p).unwrap();
        let u = cell_hamiltonian(&p).unwrap().unitary_propagator(p.total_time);
        let exact = u.column(0).into_owned();
        assert!((s.state.amplitudes() - exact).norm() < 1e-10);
    }

    #[test]
    fn occupancy_matches_schrodinger_mean() {
        for t in [0.3, 1.0, 2.5, 3.3, 7.0] {
            let p = params(0.0, t);
            let s = coherent_solution(&p).unwrap();
            let n: f64 = s.state.amplitudes().iter().enumerate().map(|(k, a)| k as f64 * a.norm_sqr()).sum();
            let per_cell = mean_n_schrodinger(&p) / 3.0;
            assert!((n - per_cell).abs() < 1e-8, "t={t}");
            assert!((s.alpha.norm_sqr() - per_cell).abs() < 1e-14);
        }
    }

    #[test]
    fn truncation_overflow() {
        let p = CosmoParams { m: 1.0, g: 2.0, cells: 1, lambda: 0.0, total_time: PI, n_max: 8 };
        assert!(matches!(coherent_solution(&p), Err(CslError::TruncationOverflow { .. })));
    }

    #[test]
    fn schrodinger_values() {
        let p = params(0.0, PI);
        assert!((mean_n_schrodinger(&p) - 4.0 * 3.0 * 0.01).abs() < 1e-15);
        assert!(mean_n_schrodinger(&params(0.0, 2.0 * PI)).abs() < 1e-15);
        assert_eq!(mean_n_schrodinger(&params(0.0, 0.0)), 0.0);
    }

    #[test]
    fn csl_limits() {
        for t in [0.0, 0.7, PI, 5.0, 19.0] {
            let p = params(0.0, t);
            assert!((mean_n_csl(&p) - mean_n_schrodinger(&p)).abs() < 1e-14);
            let small = p.with_lambda(1e-12);
            assert!((mean_n_csl(&small) - mean_n_schrodinger(&p)).abs() < 1e-10);
        }
        assert_eq!(mean_n_csl(&params(0.7, 0.0)), 0.0);
        let mut prev = f64::INFINITY;
        for l in [10.0, 30.0, 100.0, 1e3, 1e4, 1e6] {
            let n = mean_n_csl(&params(l, 5.0));
            assert!(n < prev);
            prev = n;
        }
        assert!(prev < 1e-4 * mean_n_csl(&params(1.0, 5.0)));
    }

    #[test]
    fn moment_oracle_matches_closed_form() {
        for l in [0.0, 0.05, 0.5, 3.0] {
            let p = params(l, 12.0);
            let traj = moment_ode_oracle(&p, 24).unwrap();
            for (t, n) in traj.times.iter().zip(&traj.n_mean).skip(1) {
                let exact = mean_n_csl(&p.with_time(*t));
                assert!(rel(*n, exact) < 1e-8, "lambda={l} t={t}: {n} vs {exact}");
            }
        }
        let p = params(2.0, 40.0);
        let traj = moment_ode_oracle(&p, 4).unwrap();
        assert!((traj.xi_mean.last().unwrap() - xi_fixed_point(&p)).norm() < 1e-8);
    }

    #[test]
    fn numerical_unitary_case() {
        let p = CosmoParams { cells: 1, n_max: 10, ..params(0.0, 4.0) };
        let traj = mean_n_numerical(&p, 8).unwrap();
        for (t, n) in traj.times.iter().zip(&traj.n_mean).skip(1) {
            assert!(rel(*n, mean_n_schrodinger(&p.with_time(*t))) < 1e-6);
        }
        assert!(traj.truncation_adequate);
    }

    #[test]
    fn records_at_requested_times() {
        let p = CosmoParams { n_max: 8, ..params(0.5, 0.0) };
        let times = [0.0, 0.5, 1.7, 3.0];
        let traj = mean_n_numerical_at(&p, &times).unwrap();
        assert_eq!(traj.times, times);
        for (t, n) in times.iter().zip(&traj.n_mean).skip(1) {
            let single = mean_n_numerical(&p.with_time(*t), 1).unwrap().final_n();
            assert!(rel(*n, single) < 1e-9);
        }
        assert!(mean_n_numerical_at(&p, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn two_cells_as_tensor_product() {
        let p = CosmoParams { m: 1.0, g: 0.3, cells: 1, lambda: 0.4, total_time: 3.0, n_max: 6 };
        let h = cell_hamiltonian(&p).unwrap();
        let id = HermitianOperator::identity(p.fock_dim());
        let num = number_operator(p.n_max);
        let h2 = h.kron(&id).add(&id.kron(&h)).unwrap();
        let model = LindbladModel::new(h2, vec![num.kron(&id), id.kron(&num)], p.lambda).unwrap();
        let vac = QuantumState::basis(p.fock_dim() * p.fock_dim(), 0).unwrap();
        let rho0 = DensityMatrix::from_state(&vac).unwrap();
        let traj =
            crate::master::integrate_master_strided(&rho0, &model, p.total_time, model.max_dt(), 1_000_000).unwrap();
        let total = num.kron(&id).add(&id.kron(&num)).unwrap();
        let n2 = traj.last().expectation(&total).unwrap();
        let n1 = mean_n_numerical(&CosmoParams { cells: 2, ..p }, 1).unwrap().final_n();
        assert!(rel(n2, n1) < 1e-9, "{n2} vs {n1}");
    }
}
