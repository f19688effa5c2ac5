//! Linear non-unitary collapse evolution and trajectory sampling.
//!
//! One step of length `dt` applies `exp(-i H dt)` and then, in the joint
//! eigenbasis of the collapse operators, multiplies the component on `|a_n>`
//! by
//!
//! ```text
//!   exp(-(dt / 4 lambda) sum_k (w_k - 2 lambda a_n(k))^2).
//! ```
//!
//! Physical trajectories draw each `w` from the probability rule conditioned
//! on the state after the unitary substep, which makes the sampled records
//! exactly distributed according to the squared norm of the linearly evolved
//! state for this discretization.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CslError, Result};
use crate::hilbert::{check_dim, CMatrix, CVector, DensityMatrix, HermitianOperator, QuantumState, C64};
use crate::noise::{check_rate_and_step, sample_from_components, JointEigenbasis, NoiseTrajectory, SeededRng};
use crate::table::{fmt_num, Table};

/// Dominant branch weight at which a trajectory counts as collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 1.0 - 1e-6;
/// Upper bound on `|H| dt`.
pub const MAX_UNITARY_STEP: f64 = 0.05;
/// Upper bound on `lambda dt (eigenvalue spread)^2`.
pub const MAX_COLLAPSE_STEP: f64 = 0.05;

const ENSEMBLE_CHUNK: usize = 64;
const RULE_SLACK: f64 = 1.0 + 1e-12;

/// A Hamiltonian that is either constant or given per step. A schedule
/// shorter than the run holds its last entry.
#[derive(Clone, Debug)]
pub enum Hamiltonian {
    Static(HermitianOperator),
    Schedule(Vec<HermitianOperator>),
}

impl Hamiltonian {
    pub fn zero(dim: usize) -> Self {
        Hamiltonian::Static(HermitianOperator::zeros(dim))
    }

    pub fn at(&self, step: usize) -> &HermitianOperator {
        match self {
            Hamiltonian::Static(h) => h,
            Hamiltonian::Schedule(hs) => &hs[step.min(hs.len() - 1)],
        }
    }

    fn ops(&self) -> &[HermitianOperator] {
        match self {
            Hamiltonian::Static(h) => std::slice::from_ref(h),
            Hamiltonian::Schedule(hs) => hs,
        }
    }
}

impl From<HermitianOperator> for Hamiltonian {
    fn from(h: HermitianOperator) -> Self {
        Hamiltonian::Static(h)
    }
}

#[derive(Clone, Debug)]
pub struct CslModel {
    hamiltonian: Hamiltonian,
    collapse_ops: Vec<HermitianOperator>,
    lambda: f64,
    dt: f64,
    n_steps: usize,
    basis: JointEigenbasis,
    propagators: Vec<Option<CMatrix>>,
}

impl CslModel {
    pub fn new(
        hamiltonian: impl Into<Hamiltonian>,
        collapse_ops: Vec<HermitianOperator>,
        lambda: f64,
        dt: f64,
        n_steps: usize,
    ) -> Result<Self> {
        let hamiltonian = hamiltonian.into();
        if hamiltonian.ops().is_empty() {
            return Err(CslError::InvalidParameter("empty Hamiltonian schedule".into()));
        }
        let dim = hamiltonian.ops()[0].dim();
        for h in hamiltonian.ops() {
            check_dim(dim, h.dim())?;
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CslError::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CslError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let basis = JointEigenbasis::new(&collapse_ops, dim)?;

        let h_norm = hamiltonian.ops().iter().map(|h| h.spectral_norm()).fold(0.0, f64::max);
        if h_norm * dt > MAX_UNITARY_STEP * RULE_SLACK {
            return Err(CslError::StepSizeViolation(format!(
                "|H| dt = {:.3e} exceeds {MAX_UNITARY_STEP}",
                h_norm * dt
            )));
        }
        let collapse = lambda * dt * basis.max_spread_sq();
        if collapse > MAX_COLLAPSE_STEP * RULE_SLACK {
            return Err(CslError::StepSizeViolation(format!(
                "lambda dt spread^2 = {collapse:.3e} exceeds {MAX_COLLAPSE_STEP}"
            )));
        }

        let propagators =
            hamiltonian.ops().iter().map(|h| if h.is_zero() { None } else { Some(h.unitary_propagator(dt)) }).collect();
        Ok(Self { hamiltonian, collapse_ops, lambda, dt, n_steps, basis, propagators })
    }

    /// Largest `dt` satisfying both step rules.
    pub fn max_dt(hamiltonian: &Hamiltonian, collapse_ops: &[HermitianOperator], lambda: f64) -> Result<f64> {
        let dim = hamiltonian.ops()[0].dim();
        let basis = JointEigenbasis::new(collapse_ops, dim)?;
        let h_norm = hamiltonian.ops().iter().map(|h| h.spectral_norm()).fold(0.0, f64::max);
        let a = if h_norm > 0.0 { MAX_UNITARY_STEP / h_norm } else { f64::INFINITY };
        let spread = lambda * basis.max_spread_sq();
        let b = if spread > 0.0 { MAX_COLLAPSE_STEP / spread } else { f64::INFINITY };
        Ok(a.min(b))
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_channels(&self) -> usize {
        self.collapse_ops.len()
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.hamiltonian
    }

    pub fn collapse_ops(&self) -> &[HermitianOperator] {
        &self.collapse_ops
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn basis(&self) -> &JointEigenbasis {
        &self.basis
    }

    fn propagator(&self, step: usize) -> Option<&CMatrix> {
        self.propagators[step.min(self.propagators.len() - 1)].as_ref()
    }

    /// Log of the amplitude factor on each joint eigenvector for noise `w`.
    fn log_collapse_factors(&self, w: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        if self.lambda == 0.0 {
            return vec![0.0; dim];
        }
        let pre = self.dt / (4.0 * self.lambda);
        (0..dim)
            .map(|n| {
                let s: f64 =
                    self.basis.eigenvalues(n).iter().zip(w).map(|(&a, &wk)| (wk - 2.0 * self.lambda * a).powi(2)).sum();
                -pre * s
            })
            .collect()
    }

    fn check_noise(&self, w: &[f64]) -> Result<()> {
        check_dim(self.n_channels(), w.len())?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(CslError::NonFinite("noise sample"));
        }
        Ok(())
    }
}

/// One unnormalized step of the linear evolution.
pub fn evolve_linear_step(state: &QuantumState, model: &CslModel, w: &[f64], step: usize) -> Result<QuantumState> {
    check_dim(model.dim(), state.dim())?;
    model.check_noise(w)?;
    let mut psi = state.amplitudes().clone();
    if let Some(u) = model.propagator(step) {
        psi = u * psi;
    }
    let mut coeffs = model.basis.to_eigenbasis(&psi);
    for (z, lf) in coeffs.iter_mut().zip(model.log_collapse_factors(w)) {
        *z *= lf.exp();
    }
    QuantumState::new(model.basis.from_eigenbasis(&coeffs))
}

/// Scales `coeffs` by `exp(log_factors)` and renormalizes; returns the log of
/// the squared-norm factor that was divided out.
fn apply_collapse(coeffs: &mut CVector, log_factors: &[f64]) -> Option<f64> {
    let shift = coeffs
        .iter()
        .zip(log_factors)
        .filter(|(z, _)| z.norm_sqr() > 0.0)
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return None;
    }
    for (z, &l) in coeffs.iter_mut().zip(log_factors) {
        *z *= (l - shift).exp();
    }
    let ns: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum();
    if !(ns > 0.0 && ns.is_finite()) {
        return None;
    }
    *coeffs /= C64::new(ns.sqrt(), 0.0);
    Some(ns.ln() + 2.0 * shift)
}

fn normalize_in_place(v: &mut CVector) -> f64 {
    let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    *v /= C64::new(n2.sqrt(), 0.0);
    n2
}

fn require_normalized(state: &QuantumState) -> Result<()> {
    if !state.is_normalized() {
        return Err(CslError::NotNormalized { norm_sq: state.norm_sq() });
    }
    Ok(())
}

/// `ln <psi,t|psi,t>_w` for the given noise record.
pub fn log_trajectory_probability(initial: &QuantumState, model: &CslModel, noise: &NoiseTrajectory) -> Result<f64> {
    check_dim(model.dim(), initial.dim())?;
    require_normalized(initial)?;
    if (noise.dt() - model.dt).abs() > 1e-12 * model.dt {
        return Err(CslError::InvalidParameter(format!(
            "noise dt {} does not match model dt {}",
            noise.dt(),
            model.dt
        )));
    }
    check_dim(model.n_channels(), noise.n_channels())?;
    let mut psi = initial.amplitudes().clone();
    let mut log_norm = normalize_in_place(&mut psi).ln();
    for step in 0..noise.n_steps() {
        if let Some(u) = model.propagator(step) {
            psi = u * psi;
        }
        let mut coeffs = model.basis.to_eigenbasis(&psi);
        log_norm += normalize_in_place(&mut coeffs).ln();
        let g = apply_collapse(&mut coeffs, &model.log_collapse_factors(noise.row(step)))
            .ok_or(CslError::NormUnderflow { step })?;
        log_norm += g;
        psi = model.basis.from_eigenbasis(&coeffs);
    }
    Ok(log_norm)
}

/// Squared norm of the linearly evolved state: the density of `noise` relative
/// to the Gaussian reference measure.
pub fn trajectory_probability(initial: &QuantumState, model: &CslModel, noise: &NoiseTrajectory) -> Result<f64> {
    Ok(log_trajectory_probability(initial, model, noise)?.exp())
}

/// Per-step view handed to trajectory observers.
struct StepView<'a> {
    step: usize,
    psi: &'a CVector,
    weights: &'a [f64],
    log_norm_sq: f64,
}

struct RunOutcome {
    noise: NoiseTrajectory,
    outcome: Option<(usize, usize)>,
}

fn detect(weights: &[f64]) -> Option<usize> {
    weights.iter().position(|&w| w > COLLAPSE_THRESHOLD)
}

fn run_trajectory<F>(initial: &QuantumState, model: &CslModel, rng: &mut SeededRng, mut visit: F) -> Result<RunOutcome>
where
    F: FnMut(StepView<'_>),
{
    check_dim(model.dim(), initial.dim())?;
    require_normalized(initial)?;
    check_rate_and_step(model.lambda, model.dt)?;
    let basis = &model.basis;

    let mut psi = initial.amplitudes().clone();
    let mut log_norm = normalize_in_place(&mut psi).ln();
    let mut noise = NoiseTrajectory::new(model.dt, model.n_channels())?;
    let coeffs = basis.to_eigenbasis(&psi);
    let mut weights = basis.branch_weights(&coeffs);
    let mut outcome = detect(&weights).map(|b| (b, 0));
    visit(StepView { step: 0, psi: &psi, weights: &weights, log_norm_sq: log_norm });

    for step in 0..model.n_steps {
        if let Some(u) = model.propagator(step) {
            psi = u * psi;
        }
        let mut coeffs = basis.to_eigenbasis(&psi);
        log_norm += normalize_in_place(&mut coeffs).ln();
        let sample = sample_from_components(&coeffs, basis, model.lambda, model.dt, rng);
        let g = apply_collapse(&mut coeffs, &model.log_collapse_factors(&sample.w))
            .ok_or(CslError::NormUnderflow { step })?;
        log_norm += g;
        noise.push(&sample.w)?;
        psi = basis.from_eigenbasis(&coeffs);
        weights = basis.branch_weights(&coeffs);
        if outcome.is_none() {
            outcome = detect(&weights).map(|b| (b, step + 1));
        }
        visit(StepView { step: step + 1, psi: &psi, weights: &weights, log_norm_sq: log_norm });
    }
    Ok(RunOutcome { noise, outcome })
}

/// A single physical trajectory. States are stored normalized; the squared
/// norm of the linearly evolved state is carried separately in log space.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub noise: NoiseTrajectory,
    /// Normalized state after each step; index 0 is the initial state.
    pub states: Vec<QuantumState>,
    pub log_norms_sq: Vec<f64>,
    pub branch_weights: Vec<Vec<f64>>,
    /// Branch whose weight first exceeded `COLLAPSE_THRESHOLD`.
    pub outcome: Option<usize>,
    pub outcome_step: Option<usize>,
}

impl TrajectoryRecord {
    pub fn norms_sq(&self) -> Vec<f64> {
        self.log_norms_sq.iter().map(|l| l.exp()).collect()
    }

    /// The linearly evolved (unnormalized) state after `step` steps. May
    /// underflow for long runs; `states` and `log_norms_sq` never do.
    pub fn unnormalized_state(&self, step: usize) -> QuantumState {
        self.states[step].scaled(C64::new((0.5 * self.log_norms_sq[step]).exp(), 0.0))
    }

    pub fn final_state(&self) -> &QuantumState {
        self.states.last().expect("record holds the initial state")
    }

    pub fn to_table(&self) -> Table {
        let dt = self.noise.dt();
        let mut t = Table::new(&["step", "time", "log_norm_sq", "basis", "re", "im"]);
        for (step, s) in self.states.iter().enumerate() {
            for (i, z) in s.amplitudes().iter().enumerate() {
                t.push(vec![
                    step.to_string(),
                    fmt_num(step as f64 * dt),
                    fmt_num(self.log_norms_sq[step]),
                    i.to_string(),
                    fmt_num(z.re),
                    fmt_num(z.im),
                ]);
            }
        }
        t
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_table().write_csv(w)
    }
}

/// Samples one physical trajectory.
pub fn sample_trajectory(initial: &QuantumState, model: &CslModel, rng: &mut SeededRng) -> Result<TrajectoryRecord> {
    let n = model.n_steps + 1;
    let mut states = Vec::with_capacity(n);
    let mut log_norms_sq = Vec::with_capacity(n);
    let mut branch_weights = Vec::with_capacity(n);
    let run = run_trajectory(initial, model, rng, |v| {
        states.push(QuantumState::new(v.psi.clone()).expect("finite state"));
        log_norms_sq.push(v.log_norm_sq);
        branch_weights.push(v.weights.to_vec());
    })?;
    Ok(TrajectoryRecord {
        noise: run.noise,
        states,
        log_norms_sq,
        branch_weights,
        outcome: run.outcome.map(|o| o.0),
        outcome_step: run.outcome.map(|o| o.1),
    })
}

#[derive(Clone, Debug)]
struct Accumulator {
    n: usize,
    proj_sum: Vec<CMatrix>,
    proj_sq_re: Vec<DMatrix<f64>>,
    proj_sq_im: Vec<DMatrix<f64>>,
    weight_sum: Vec<Vec<f64>>,
    weight_sq: Vec<Vec<f64>>,
    log_norm_sum: Vec<f64>,
    outcome_counts: Vec<usize>,
    uncollapsed: usize,
}

impl Accumulator {
    fn new(n_records: usize, dim: usize, n_branches: usize) -> Self {
        Self {
            n: 0,
            proj_sum: vec![CMatrix::zeros(dim, dim); n_records],
            proj_sq_re: vec![DMatrix::zeros(dim, dim); n_records],
            proj_sq_im: vec![DMatrix::zeros(dim, dim); n_records],
            weight_sum: vec![vec![0.0; n_branches]; n_records],
            weight_sq: vec![vec![0.0; n_branches]; n_records],
            log_norm_sum: vec![0.0; n_records],
            outcome_counts: vec![0; n_branches],
            uncollapsed: 0,
        }
    }

    fn visit(&mut self, v: StepView<'_>) {
        let s = v.step;
        let psi = v.psi;
        let dim = psi.len();
        for j in 0..dim {
            for i in 0..dim {
                let z = psi[i] * psi[j].conj();
                self.proj_sum[s][(i, j)] += z;
                self.proj_sq_re[s][(i, j)] += z.re * z.re;
                self.proj_sq_im[s][(i, j)] += z.im * z.im;
            }
        }
        for (b, &w) in v.weights.iter().enumerate() {
            self.weight_sum[s][b] += w;
            self.weight_sq[s][b] += w * w;
        }
        self.log_norm_sum[s] += v.log_norm_sq;
    }

    fn merge(&mut self, other: &Accumulator) {
        self.n += other.n;
        for s in 0..self.proj_sum.len() {
            self.proj_sum[s] += &other.proj_sum[s];
            self.proj_sq_re[s] += &other.proj_sq_re[s];
            self.proj_sq_im[s] += &other.proj_sq_im[s];
            for b in 0..self.weight_sum[s].len() {
                self.weight_sum[s][b] += other.weight_sum[s][b];
                self.weight_sq[s][b] += other.weight_sq[s][b];
            }
            self.log_norm_sum[s] += other.log_norm_sum[s];
        }
        for (a, b) in self.outcome_counts.iter_mut().zip(&other.outcome_counts) {
            *a += b;
        }
        self.uncollapsed += other.uncollapsed;
    }
}

fn std_error(sum: f64, sum_sq: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (var / nf).sqrt()
}

/// Monte Carlo summary of an ensemble of physical trajectories.
#[derive(Clone, Debug)]
pub struct EnsembleSummary {
    pub n_traj: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub branch_eigenvalues: Vec<Vec<f64>>,
    pub outcome_counts: Vec<usize>,
    pub uncollapsed: usize,
    pub outcome_frequencies: Vec<f64>,
    /// Binomial standard errors of `outcome_frequencies`.
    pub outcome_std_errors: Vec<f64>,
    /// Ensemble mean of `ln <psi|psi>_w` per step.
    pub mean_log_norm_sq: Vec<f64>,
    pub mean_branch_weights: Vec<Vec<f64>>,
    pub branch_weight_std_errors: Vec<Vec<f64>>,
    /// Averaged normalized projector per step.
    pub projector_mean: Vec<CMatrix>,
    /// Standard errors of the real (`re`) and imaginary (`im`) parts of
    /// `projector_mean`.
    pub projector_std_err: Vec<CMatrix>,
}

/// Summary statistics in a serializable form.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub branch_eigenvalues: Vec<Vec<f64>>,
    pub outcome_counts: Vec<usize>,
    pub uncollapsed: usize,
    pub outcome_frequencies: Vec<f64>,
    pub outcome_std_errors: Vec<f64>,
    pub final_mean_log_norm_sq: f64,
    pub initial_branch_weights: Vec<f64>,
    pub final_mean_branch_weights: Vec<f64>,
}

impl EnsembleSummary {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|s| s as f64 * self.dt).collect()
    }

    pub fn density_matrix(&self, step: usize) -> Result<DensityMatrix> {
        DensityMatrix::new(self.projector_mean[step].clone())
    }

    pub fn stats(&self) -> EnsembleStats {
        EnsembleStats {
            n_traj: self.n_traj,
            dt: self.dt,
            n_steps: self.n_steps,
            branch_eigenvalues: self.branch_eigenvalues.clone(),
            outcome_counts: self.outcome_counts.clone(),
            uncollapsed: self.uncollapsed,
            outcome_frequencies: self.outcome_frequencies.clone(),
            outcome_std_errors: self.outcome_std_errors.clone(),
            final_mean_log_norm_sq: *self.mean_log_norm_sq.last().unwrap(),
            initial_branch_weights: self.mean_branch_weights[0].clone(),
            final_mean_branch_weights: self.mean_branch_weights.last().unwrap().clone(),
        }
    }

    pub fn outcome_table(&self) -> Table {
        let mut t = Table::new(&["branch", "eigenvalues", "count", "frequency", "std_error"]);
        for b in 0..self.outcome_counts.len() {
            let ev: Vec<String> = self.branch_eigenvalues[b].iter().map(|&x| fmt_num(x)).collect();
            t.push(vec![
                b.to_string(),
                ev.join(";"),
                self.outcome_counts[b].to_string(),
                fmt_num(self.outcome_frequencies[b]),
                fmt_num(self.outcome_std_errors[b]),
            ]);
        }
        t
    }

    pub fn projector_table(&self) -> Table {
        let mut t = Table::new(&["step", "time", "row", "col", "re", "im", "se_re", "se_im"]);
        for (s, (m, se)) in self.projector_mean.iter().zip(&self.projector_std_err).enumerate() {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    t.push(vec![
                        s.to_string(),
                        fmt_num(s as f64 * self.dt),
                        i.to_string(),
                        j.to_string(),
                        fmt_num(m[(i, j)].re),
                        fmt_num(m[(i, j)].im),
                        fmt_num(se[(i, j)].re),
                        fmt_num(se[(i, j)].im),
                    ]);
                }
            }
        }
        t
    }

    pub fn branch_weight_table(&self) -> Table {
        let mut t = Table::new(&["step", "time", "branch", "mean_weight", "std_error", "mean_log_norm_sq"]);
        for (s, (w, se)) in self.mean_branch_weights.iter().zip(&self.branch_weight_std_errors).enumerate() {
            for b in 0..w.len() {
                t.push(vec![
                    s.to_string(),
                    fmt_num(s as f64 * self.dt),
                    b.to_string(),
                    fmt_num(w[b]),
                    fmt_num(se[b]),
                    fmt_num(self.mean_log_norm_sq[s]),
                ]);
            }
        }
        t
    }
}

/// Runs `n_traj` independent trajectories (trajectory `i` uses stream `i` of
/// `seed`) and averages them. Trajectories run in parallel; partial sums are
/// combined in a fixed order so the result does not depend on the number of
/// worker threads.
pub fn run_ensemble(initial: &QuantumState, model: &CslModel, n_traj: usize, seed: u64) -> Result<EnsembleSummary> {
    if n_traj == 0 {
        return Err(CslError::InvalidParameter("n_traj must be >= 1".into()));
    }
    check_dim(model.dim(), initial.dim())?;
    require_normalized(initial)?;
    check_rate_and_step(model.lambda, model.dt)?;
    let n_records = model.n_steps + 1;
    let dim = model.dim();
    let n_branches = model.basis.branches().len();

    let starts: Vec<usize> = (0..n_traj).step_by(ENSEMBLE_CHUNK).collect();
    let partials: Vec<Result<Accumulator>> = starts
        .into_par_iter()
        .map(|start| {
            let mut acc = Accumulator::new(n_records, dim, n_branches);
            for i in start..(start + ENSEMBLE_CHUNK).min(n_traj) {
                let mut rng = SeededRng::new(seed, i as u64);
                let run = run_trajectory(initial, model, &mut rng, |v| acc.visit(v))?;
                match run.outcome {
                    Some((b, _)) => acc.outcome_counts[b] += 1,
                    None => acc.uncollapsed += 1,
                }
                acc.n += 1;
            }
            Ok(acc)
        })
        .collect();

    let mut total = Accumulator::new(n_records, dim, n_branches);
    for p in partials {
        total.merge(&p?);
    }

    let n = total.n;
    let nf = n as f64;
    let outcome_frequencies: Vec<f64> = total.outcome_counts.iter().map(|&c| c as f64 / nf).collect();
    let outcome_std_errors = outcome_frequencies.iter().map(|&f| (f * (1.0 - f) / nf).sqrt()).collect();
    let projector_mean: Vec<CMatrix> = total.proj_sum.iter().map(|m| m / C64::new(nf, 0.0)).collect();
    let projector_std_err = (0..n_records)
        .map(|s| {
            CMatrix::from_fn(dim, dim, |i, j| {
                let z = total.proj_sum[s][(i, j)];
                C64::new(
                    std_error(z.re, total.proj_sq_re[s][(i, j)], n),
                    std_error(z.im, total.proj_sq_im[s][(i, j)], n),
                )
            })
        })
        .collect();
    let mean_branch_weights = total.weight_sum.iter().map(|w| w.iter().map(|x| x / nf).collect()).collect();
    let branch_weight_std_errors = total
        .weight_sum
        .iter()
        .zip(&total.weight_sq)
        .map(|(w, w2)| w.iter().zip(w2).map(|(&a, &b)| std_error(a, b, n)).collect())
        .collect();

    Ok(EnsembleSummary {
        n_traj: n,
        dt: model.dt,
        n_steps: model.n_steps,
        branch_eigenvalues: model.basis.branches().iter().map(|b| b.eigenvalues.clone()).collect(),
        outcome_counts: total.outcome_counts,
        uncollapsed: total.uncollapsed,
        outcome_frequencies,
        outcome_std_errors,
        mean_log_norm_sq: total.log_norm_sum.iter().map(|x| x / nf).collect(),
        mean_branch_weights,
        branch_weight_std_errors,
        projector_mean,
        projector_std_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::c;

    fn diag(values: &[f64]) -> HermitianOperator {
        HermitianOperator::from_real_diagonal(values).unwrap()
    }

    fn two_state() -> QuantumState {
        QuantumState::from_real(&[0.6_f64.sqrt(), 0.4_f64.sqrt()]).unwrap()
    }

    #[test]
    fn zero_exponent_leaves_eigenstate_unchanged() {
        let (lambda, a1) = (0.8, 0.3);
        let model = CslModel::new(Hamiltonian::zero(2), vec![diag(&[a1, 1.0])], lambda, 0.01, 10).unwrap();
        let s = QuantumState::basis(2, 0).unwrap();
        let out = evolve_linear_step(&s, &model, &[2.0 * lambda * a1], 0).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn single_step_matches_scalar_exponentials() {
        let (lambda, dt, a1, a2, w) = (1.3, 0.02, -0.4, 0.9, 0.77);
        let model = CslModel::new(Hamiltonian::zero(2), vec![diag(&[a1, a2])], lambda, dt, 1).unwrap();
        let s = two_state();
        let out = evolve_linear_step(&s, &model, &[w], 0).unwrap();
        let f = |a: f64| (-(dt / (4.0 * lambda)) * (w - 2.0 * lambda * a).powi(2)).exp();
        let c1 = 0.6_f64.sqrt() * f(a1);
        let c2 = 0.4_f64.sqrt() * f(a2);
        assert!((out.amplitudes()[0].re - c1).abs() < 1e-12 * c1);
        assert!((out.amplitudes()[1].re - c2).abs() < 1e-12 * c2);
        let ratio = (out.amplitudes()[0] / out.amplitudes()[1]).re;
        let oracle = (0.6_f64 / 0.4).sqrt()
            * (-(dt / (4.0 * lambda)) * ((w - 2.0 * lambda * a1).powi(2) - (w - 2.0 * lambda * a2).powi(2))).exp();
        assert!((ratio - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn branch_noise_collapses_onto_that_branch() {
        let (lambda, dt) = (5.0, 0.01);
        let (a1, a2) = (0.0, 1.0);
        let model = CslModel::new(Hamiltonian::zero(2), vec![diag(&[a1, a2])], lambda, dt, 400).unwrap();
        let mut state = two_state();
        let mut rng = SeededRng::new(17, 0);
        for step in 0..400 {
            let w = 2.0 * lambda * a1 + (lambda / dt).sqrt() * rng.standard_normal();
            state = evolve_linear_step(&state, &model, &[w], step).unwrap().normalized().unwrap();
        }
        assert!(state.amplitudes()[0].norm_sqr() > 1.0 - 1e-6);
    }

    #[test]
    fn probability_of_empty_and_matched_records() {
        let lambda = 0.5;
        let model = CslModel::new(Hamiltonian::zero(2), vec![diag(&[0.2, 1.0])], lambda, 0.05, 0).unwrap();
        let empty = NoiseTrajectory::new(0.05, 1).unwrap();
        assert_eq!(trajectory_probability(&two_state(), &model, &empty).unwrap(), 1.0);
        let matched = NoiseTrajectory::from_channel(0.05, &[2.0 * lambda * 0.2; 30]).unwrap();
        let p = trajectory_probability(&QuantumState::basis(2, 0).unwrap(), &model, &matched).unwrap();
        assert!((p - 1.0).abs() < 1e-14);
    }

    #[test]
    fn probability_matches_closed_form() {
        let (lambda, dt, a1, a2) = (0.9, 0.02, -0.5, 0.5);
        let model = CslModel::new(Hamiltonian::zero(2), vec![diag(&[a1, a2])], lambda, dt, 0).unwrap();
        let mut rng = SeededRng::new(2, 0);
        let ws: Vec<f64> = (0..200).map(|_| 0.3 + (lambda / dt).sqrt() * rng.standard_normal()).collect();
        let noise = NoiseTrajectory::from_channel(dt, &ws).unwrap();
        let branch = |p: f64, a: f64| {
            let s: f64 = ws.iter().map(|w| dt * (w - 2.0 * lambda * a).powi(2)).sum();
            p * (-s / (2.0 * lambda)).exp()
        };
        let closed = branch(0.6, a1) + branch(0.4, a2);
        let iterated = trajectory_probability(&two_state(), &model, &noise).unwrap();
        assert!((iterated - closed).abs() < 1e-10 * closed, "{iterated} vs {closed}");
    }

    #[test]
    fn record_is_consistent_with_its_noise() {
        let h = HermitianOperator::new(CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])).unwrap();
        let model = CslModel::new(h, vec![diag(&[0.0, 1.0])], 1.0, 0.02, 150).unwrap();
        let mut rng = SeededRng::new(4, 3);
        let rec = sample_trajectory(&two_state(), &model, &mut rng).unwrap();
        assert_eq!(rec.states.len(), 151);
        assert_eq!(rec.noise.n_steps(), 150);
        let lp = log_trajectory_probability(&two_state(), &model, &rec.noise).unwrap();
        assert!((lp - rec.log_norms_sq[150]).abs() < 1e-10 * lp.abs().max(1.0));
        // Unnormalized state squared norm equals the recorded norm.
        for step in [0, 10, 75] {
            let u = rec.unnormalized_state(step);
            assert!((u.norm_sq() - rec.norms_sq()[step]).abs() <= 1e-10 * rec.norms_sq()[step]);
        }
    }

    #[test]
    fn eigenstate_always_collapses_to_itself() {
        let model = CslModel::new(Hamiltonian::zero(3), vec![diag(&[1.0, 2.0, 3.0])], 1.0, 0.01, 20).unwrap();
        let s = QuantumState::basis(3, 1).unwrap();
        let summary = run_ensemble(&s, &model, 200, 1).unwrap();
        assert_eq!(summary.outcome_counts, vec![0, 200, 0]);
    }

    #[test]
    fn unitary_limit_preserves_norm() {
        let h = HermitianOperator::new(CMatrix::from_row_slice(2, 2, &[c(0.3), c(1.0), c(1.0), c(-0.2)])).unwrap();
        let model = CslModel::new(h, vec![diag(&[0.0, 1.0])], 0.0, 0.01, 100).unwrap();
        let mut s = two_state();
        for step in 0..100 {
            let next = evolve_linear_step(&s, &model, &[0.0], step).unwrap();
            assert!((next.norm_sq() - 1.0).abs() < 1e-10 * (step + 1) as f64);
            s = next;
        }
    }

    #[test]
    fn h_zero_never_mixes_branches() {
        let model = CslModel::new(Hamiltonian::zero(3), vec![diag(&[0.0, 1.0, 2.0])], 1.0, 0.01, 50).unwrap();
        let s = QuantumState::from_real(&[0.5, 0.0, 0.75_f64.sqrt()]).unwrap();
        let rec = sample_trajectory(&s, &model, &mut SeededRng::new(1, 1)).unwrap();
        assert!(rec.states.iter().all(|st| st.amplitudes()[1] == C64::default()));
    }

    #[test]
    fn step_rule_is_enforced() {
        let err = CslModel::new(Hamiltonian::zero(2), vec![diag(&[0.0, 1.0])], 1.0, 0.2, 10).unwrap_err();
        assert!(matches!(err, CslError::StepSizeViolation(_)));
        let dt = CslModel::max_dt(&Hamiltonian::zero(2), &[diag(&[0.0, 2.0])], 0.5).unwrap();
        assert!((dt - 0.025).abs() < 1e-15);
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let h = HermitianOperator::new(CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.5), c(0.5), c(0.0)])).unwrap();
        let model = CslModel::new(h, vec![diag(&[0.0, 1.0])], 1.0, 0.02, 40).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble(&two_state(), &model, 300, 11).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.projector_mean, b.projector_mean);
        assert_eq!(a.projector_std_err, b.projector_std_err);
        assert_eq!(a.outcome_counts, b.outcome_counts);
    }

    #[test]
    fn initial_ensemble_matrix_is_initial_projector() {
        let model = CslModel::new(Hamiltonian::zero(2), vec![diag(&[0.0, 1.0])], 1.0, 0.05, 5).unwrap();
        let summary = run_ensemble(&two_state(), &model, 50, 0).unwrap();
        let expected = two_state().projector().unwrap();
        assert!((&summary.projector_mean[0] - expected).norm() < 1e-15);
        assert!(summary.density_matrix(5).is_ok());
    }
}
