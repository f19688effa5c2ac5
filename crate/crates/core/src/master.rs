//! Ensemble-level evolution
//!
//! ```text
//!   d rho / dt = -i [H, rho] - (lambda / 2) sum_k [A_k, [A_k, rho]]
//! ```
//!
//! integrated with fixed-step classical RK4, plus the closed-form two-level
//! coherence decay used as its oracle.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{CslError, Result};
use crate::hilbert::{
    check_dim, commutator, hermitian_deviation, hermitian_part, CMatrix, DensityMatrix, HermitianOperator, C64,
};
use crate::table::{fmt_num, Table};

/// Upper bound on `dt (|H| + lambda sum_k |A_k|^2)`.
pub const MAX_MASTER_STEP: f64 = 0.1;
/// Smallest eigenvalue tolerated before integration is aborted.
pub const PSD_ABORT: f64 = -1e-6;
const TRACE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LindbladModel {
    hamiltonian: HermitianOperator,
    collapse_ops: Vec<HermitianOperator>,
    lambda: f64,
    /// `(lambda / 2) sum_k (a_i^k - a_j^k)^2` when every collapse operator is
    /// diagonal; the dissipator is then an entrywise product.
    dephasing: Option<DMatrix<f64>>,
    squares: Vec<CMatrix>,
}

impl LindbladModel {
    pub fn new(hamiltonian: HermitianOperator, collapse_ops: Vec<HermitianOperator>, lambda: f64) -> Result<Self> {
        let dim = hamiltonian.dim();
        for a in &collapse_ops {
            check_dim(dim, a.dim())?;
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CslError::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        let diagonals: Option<Vec<Vec<f64>>> = collapse_ops.iter().map(|a| a.diagonal_entries()).collect();
        let (dephasing, squares) = match diagonals {
            Some(diags) => {
                let g = DMatrix::from_fn(dim, dim, |i, j| {
                    0.5 * lambda * diags.iter().map(|d| (d[i] - d[j]).powi(2)).sum::<f64>()
                });
                (Some(g), Vec::new())
            }
            None => (None, collapse_ops.iter().map(|a| a.matrix() * a.matrix()).collect()),
        };
        Ok(Self { hamiltonian, collapse_ops, lambda, dephasing, squares })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.hamiltonian
    }

    pub fn collapse_ops(&self) -> &[HermitianOperator] {
        &self.collapse_ops
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `|H| + lambda sum_k |A_k|^2` (spectral norms).
    pub fn stiffness(&self) -> f64 {
        let a: f64 = self.collapse_ops.iter().map(|a| a.spectral_norm().powi(2)).sum();
        self.hamiltonian.spectral_norm() + self.lambda * a
    }

    /// Largest step allowed by the step rule.
    pub fn max_dt(&self) -> f64 {
        let s = self.stiffness();
        if s > 0.0 {
            MAX_MASTER_STEP / s
        } else {
            f64::INFINITY
        }
    }

    pub(crate) fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let h = self.hamiltonian.matrix();
        let mut out = commutator(h, rho) * C64::new(0.0, -1.0);
        if self.lambda == 0.0 {
            return out;
        }
        match &self.dephasing {
            Some(g) => {
                for j in 0..rho.ncols() {
                    for i in 0..rho.nrows() {
                        out[(i, j)] -= rho[(i, j)] * g[(i, j)];
                    }
                }
            }
            None => {
                for (a, a2) in self.collapse_ops.iter().zip(&self.squares) {
                    let a = a.matrix();
                    // [A,[A,rho]] = A^2 rho - 2 A rho A + rho A^2
                    let arho = a * rho;
                    let dc = a2 * rho - (&arho * a) * C64::new(2.0, 0.0) + rho * a2;
                    out -= dc * C64::new(0.5 * self.lambda, 0.0);
                }
            }
        }
        out
    }

    /// Contribution `-(lambda / 2) [A_k, [A_k, rho]]` of one collapse channel.
    pub fn channel_dissipator(&self, k: usize, rho: &CMatrix) -> Result<CMatrix> {
        let a = self.collapse_ops.get(k).ok_or(CslError::OutOfRange { index: k, limit: self.collapse_ops.len() })?;
        check_dim(self.dim(), rho.nrows())?;
        let inner = commutator(a.matrix(), rho);
        Ok(commutator(a.matrix(), &inner) * C64::new(-0.5 * self.lambda, 0.0))
    }
}

/// Right-hand side of the master equation at `rho`.
pub fn lindblad_rhs(rho: &DensityMatrix, model: &LindbladModel) -> Result<CMatrix> {
    check_dim(model.dim(), rho.dim())?;
    Ok(model.rhs(rho.matrix()))
}

/// Fixed-step RK4 integrator that re-symmetrizes after every step.
#[derive(Clone, Debug)]
pub struct MasterIntegrator<'a> {
    model: &'a LindbladModel,
    dt: f64,
    rho: CMatrix,
    step: usize,
}

impl<'a> MasterIntegrator<'a> {
    pub fn new(rho0: &DensityMatrix, model: &'a LindbladModel, dt: f64) -> Result<Self> {
        check_dim(model.dim(), rho0.dim())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CslError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let rule = dt * model.stiffness();
        if rule > MAX_MASTER_STEP * (1.0 + 1e-12) {
            return Err(CslError::StepSizeViolation(format!(
                "dt (|H| + lambda sum |A|^2) = {rule:.3e} exceeds {MAX_MASTER_STEP}"
            )));
        }
        Ok(Self { model, dt, rho: rho0.matrix().clone(), step: 0 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn step(&mut self) {
        let h = C64::new(self.dt, 0.0);
        let half = C64::new(0.5 * self.dt, 0.0);
        let rho = &self.rho;
        let k1 = self.model.rhs(rho);
        let k2 = self.model.rhs(&(rho + &k1 * half));
        let k3 = self.model.rhs(&(rho + &k2 * half));
        let k4 = self.model.rhs(&(rho + &k3 * h));
        let incr = (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(self.dt / 6.0, 0.0);
        self.rho = hermitian_part(&(rho + incr));
        self.step += 1;
    }

    /// Validates trace and positivity of the current state and returns it.
    pub fn checked_state(&self) -> Result<DensityMatrix> {
        let trace = self.rho.trace().re;
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(CslError::TraceViolation { trace });
        }
        let rho = DensityMatrix::from_matrix_unchecked(self.rho.clone());
        let min = rho.min_eigenvalue();
        if min < PSD_ABORT {
            return Err(CslError::PsdViolation { min_eigenvalue: min });
        }
        debug_assert!(hermitian_deviation(&self.rho) == 0.0);
        Ok(rho)
    }
}

/// A sampled density-matrix trajectory.
#[derive(Clone, Debug)]
pub struct MasterTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

impl MasterTrajectory {
    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["time", "row", "col", "re", "im"]);
        for (time, rho) in self.times.iter().zip(&self.states) {
            let m = rho.matrix();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    t.push(vec![
                        fmt_num(*time),
                        i.to_string(),
                        j.to_string(),
                        fmt_num(m[(i, j)].re),
                        fmt_num(m[(i, j)].im),
                    ]);
                }
            }
        }
        t
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_table().write_csv(w)
    }
}

/// Number of steps and the uniform step that lands exactly on `t_final`
/// without exceeding `dt`.
pub fn step_plan(t_final: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(CslError::InvalidParameter(format!("t_final must be >= 0, got {t_final}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CslError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if t_final == 0.0 {
        return Ok((0, dt));
    }
    let n = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((n, t_final / n as f64))
}

/// Integrates to `t_final`, recording every step.
pub fn integrate_master(
    rho0: &DensityMatrix,
    model: &LindbladModel,
    t_final: f64,
    dt: f64,
) -> Result<MasterTrajectory> {
    integrate_master_strided(rho0, model, t_final, dt, 1)
}

/// Integrates to `t_final`, recording every `stride`-th step and the final
/// state. Trace and positivity are checked at every record.
pub fn integrate_master_strided(
    rho0: &DensityMatrix,
    model: &LindbladModel,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<MasterTrajectory> {
    let stride = stride.max(1);
    let (n, dt_eff) = step_plan(t_final, dt)?;
    // The step rule is checked against the requested dt.
    MasterIntegrator::new(rho0, model, dt)?;
    let mut integ = MasterIntegrator::new(rho0, model, dt_eff)?;
    let mut times = vec![0.0];
    let mut states = vec![integ.checked_state()?];
    for s in 1..=n {
        integ.step();
        if s % stride == 0 || s == n {
            times.push(s as f64 * dt_eff);
            states.push(integ.checked_state()?);
        }
    }
    Ok(MasterTrajectory { dt: dt_eff, times, states })
}

/// `c_n c_m^* exp(-(lambda t / 2)(a_n - a_m)^2)`.
pub fn analytic_offdiag(c_n: C64, c_m: C64, a_n: f64, a_m: f64, lambda: f64, t: f64) -> C64 {
    c_n * c_m.conj() * (-(0.5 * lambda * t) * (a_n - a_m).powi(2)).exp()
}
