//! Discretized white-noise records `w_k(n dt)` and exact per-step sampling
//! under the collapse probability rule.
//!
//! Conditioned on the current normalized state, one step of noise is drawn
//! from the Gaussian mixture
//!
//! ```text
//!   p(w) = sum_n |<a_n|psi>|^2  prod_k N(w_k; 2 lambda a_n(k), lambda / dt)
//! ```
//!
//! where `a_n(k)` is the eigenvalue of collapse operator `A_k` on the joint
//! eigenvector `|a_n>`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CslError, Result};
use crate::hilbert::{check_dim, CMatrix, CVector, HermitianOperator, QuantumState, C64};
use crate::table::{fmt_num, Table};

/// Pairwise commutator norm (relative to `max(1, |A||B|)`) above which a set
/// of collapse operators is rejected.
pub const COMMUTATION_TOL: f64 = 1e-10;

/// A reproducible random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8, a counter-based generator: each stream id selects an
/// independent keystream, so trajectory `i` always sees the same numbers no
/// matter which worker runs it.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn coin(&mut self) -> bool {
        self.rng.random::<bool>()
    }
}

/// A set of joint eigenvectors that share the same tuple of eigenvalues.
#[derive(Clone, Debug)]
pub struct Branch {
    /// Indices (columns of the joint eigenvector matrix) spanning the branch.
    pub members: Vec<usize>,
    /// Eigenvalue of each collapse operator on this branch.
    pub eigenvalues: Vec<f64>,
}

/// Simultaneous eigenbasis of a set of mutually commuting Hermitian
/// operators, grouped into branches (joint eigenspaces).
#[derive(Clone, Debug)]
pub struct JointEigenbasis {
    dim: usize,
    /// `None` when the computational basis already diagonalizes every
    /// operator.
    vectors: Option<CMatrix>,
    /// `eigenvalues[n][k]`: eigenvalue of operator `k` on eigenvector `n`.
    eigenvalues: Vec<Vec<f64>>,
    branch_of: Vec<usize>,
    branches: Vec<Branch>,
}

impl JointEigenbasis {
    /// Builds the joint eigenbasis, rejecting operator sets that do not
    /// commute pairwise. An empty operator list yields a single branch with
    /// the computational basis; `dim` is needed for that case.
    pub fn new(ops: &[HermitianOperator], dim: usize) -> Result<Self> {
        for op in ops {
            check_dim(dim, op.dim())?;
        }
        check_commuting(ops)?;
        let n_ops = ops.len();

        let diagonals: Option<Vec<Vec<f64>>> = ops.iter().map(|a| a.diagonal_entries()).collect();
        let (vectors, eigenvalues) = match diagonals {
            Some(diags) => {
                let ev: Vec<Vec<f64>> = (0..dim).map(|n| (0..n_ops).map(|k| diags[k][n]).collect()).collect();
                (None, ev)
            }
            None => {
                let v = refine_joint_basis(ops, dim);
                let ev = (0..dim)
                    .map(|n| {
                        let col = v.column(n);
                        ops.iter().map(|a| col.dotc(&(a.matrix() * col)).re).collect()
                    })
                    .collect();
                (Some(v), ev)
            }
        };

        let tols: Vec<f64> = ops.iter().map(cluster_tol).collect();
        let same = |x: &[f64], y: &[f64]| x.iter().zip(y).zip(&tols).all(|((a, b), t)| (a - b).abs() <= *t);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| {
            let (x, y): (&Vec<f64>, &Vec<f64>) = (&eigenvalues[i], &eigenvalues[j]);
            for ((a, b), t) in x.iter().zip(y).zip(&tols) {
                if (a - b).abs() > *t {
                    return a.partial_cmp(b).unwrap();
                }
            }
            i.cmp(&j)
        });
        let mut branches: Vec<Branch> = Vec::new();
        let mut branch_of = vec![0; dim];
        for n in order {
            match branches.last_mut() {
                Some(b) if same(&b.eigenvalues, &eigenvalues[n]) => b.members.push(n),
                _ => branches.push(Branch { members: vec![n], eigenvalues: eigenvalues[n].clone() }),
            }
            branch_of[n] = branches.len() - 1;
        }

        Ok(Self { dim, vectors, eigenvalues, branch_of, branches })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_channels(&self) -> usize {
        self.eigenvalues.first().map_or(0, |e| e.len())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch_of(&self, n: usize) -> usize {
        self.branch_of[n]
    }

    pub fn eigenvalues(&self, n: usize) -> &[f64] {
        &self.eigenvalues[n]
    }

    /// Joint eigenvectors as columns, or `None` for the computational basis.
    pub fn vectors(&self) -> Option<&CMatrix> {
        self.vectors.as_ref()
    }

    /// Largest `sum_k (a_n(k) - a_m(k))^2` over pairs of eigenvectors.
    pub fn max_spread_sq(&self) -> f64 {
        let mut best = 0.0_f64;
        for x in &self.branches {
            for y in &self.branches {
                let d: f64 = x.eigenvalues.iter().zip(&y.eigenvalues).map(|(a, b)| (a - b).powi(2)).sum();
                best = best.max(d);
            }
        }
        best
    }

    /// Components `<a_n|psi>`.
    pub fn to_eigenbasis(&self, psi: &CVector) -> CVector {
        match &self.vectors {
            Some(v) => v.ad_mul(psi),
            None => psi.clone(),
        }
    }

    pub fn from_eigenbasis(&self, coeffs: &CVector) -> CVector {
        match &self.vectors {
            Some(v) => v * coeffs,
            None => coeffs.clone(),
        }
    }

    /// Total weight on each branch for eigenbasis components `coeffs`.
    pub fn branch_weights(&self, coeffs: &CVector) -> Vec<f64> {
        self.branches.iter().map(|b| b.members.iter().map(|&n| coeffs[n].norm_sqr()).sum()).collect()
    }
}

fn cluster_tol(op: &HermitianOperator) -> f64 {
    1e-9 * op.spectral_norm().max(1.0)
}

fn check_commuting(ops: &[HermitianOperator]) -> Result<()> {
    for i in 0..ops.len() {
        for j in (i + 1)..ops.len() {
            let norm = ops[i].commutator_norm(&ops[j])?;
            let scale = (ops[i].matrix().norm() * ops[j].matrix().norm()).max(1.0);
            if norm > COMMUTATION_TOL * scale {
                return Err(CslError::NonCommuting { first: i, second: j, norm });
            }
        }
    }
    Ok(())
}

/// Diagonalize each operator in turn inside the eigenspaces left degenerate
/// by the previous ones.
fn refine_joint_basis(ops: &[HermitianOperator], dim: usize) -> CMatrix {
    let mut blocks: Vec<CMatrix> = vec![CMatrix::identity(dim, dim)];
    for op in ops {
        let tol = cluster_tol(op);
        let mut next = Vec::new();
        for basis in blocks {
            let restricted = basis.adjoint() * op.matrix() * &basis;
            let sub = HermitianOperator::new(crate::hilbert::hermitian_part(&restricted))
                .expect("restriction of a Hermitian operator is Hermitian");
            let eig = sub.eigen();
            let rotated = &basis * &eig.vectors;
            let mut start = 0;
            for j in 1..=eig.values.len() {
                if j == eig.values.len() || eig.values[j] - eig.values[j - 1] > tol {
                    next.push(rotated.columns(start, j - start).into_owned());
                    start = j;
                }
            }
        }
        blocks = next;
    }
    let mut out = CMatrix::zeros(dim, dim);
    let mut col = 0;
    for b in blocks {
        for j in 0..b.ncols() {
            out.set_column(col, &b.column(j));
            col += 1;
        }
    }
    out
}

/// One step of noise for every channel, with the branch it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub w: Vec<f64>,
    pub branch: usize,
}

/// Draws one step of physical noise given the current normalized `state`.
pub fn sample_physical_noise_step(
    state: &QuantumState,
    basis: &JointEigenbasis,
    lambda: f64,
    dt: f64,
    rng: &mut SeededRng,
) -> Result<NoiseSample> {
    check_dim(basis.dim(), state.dim())?;
    if !state.is_normalized() {
        return Err(CslError::NotNormalized { norm_sq: state.norm_sq() });
    }
    check_rate_and_step(lambda, dt)?;
    let coeffs = basis.to_eigenbasis(state.amplitudes());
    Ok(sample_from_components(&coeffs, basis, lambda, dt, rng))
}

pub(crate) fn check_rate_and_step(lambda: f64, dt: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CslError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CslError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// Mixture sampling from eigenbasis components whose squared moduli sum to
/// (approximately) one.
pub(crate) fn sample_from_components(
    coeffs: &CVector,
    basis: &JointEigenbasis,
    lambda: f64,
    dt: f64,
    rng: &mut SeededRng,
) -> NoiseSample {
    let total: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum();
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (n, z) in coeffs.iter().enumerate() {
        let p = z.norm_sqr();
        if p == 0.0 {
            continue;
        }
        acc += p;
        chosen = Some(n);
        if target < acc {
            break;
        }
    }
    let n = chosen.expect("state has nonzero weight");
    let sigma = (lambda / dt).sqrt();
    let w = basis.eigenvalues(n).iter().map(|&a| 2.0 * lambda * a + sigma * rng.standard_normal()).collect();
    NoiseSample { w, branch: basis.branch_of(n) }
}

/// A record of noise samples `w_k(n dt)`, stored row-major as
/// `[step][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTrajectory {
    dt: f64,
    n_channels: usize,
    samples: Vec<f64>,
}

impl NoiseTrajectory {
    pub fn new(dt: f64, n_channels: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CslError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { dt, n_channels, samples: Vec::new() })
    }

    /// Builds a trajectory from `rows[step][channel]`.
    pub fn from_rows(dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let n_channels = rows.first().map_or(0, |r| r.len());
        let mut t = Self::new(dt, n_channels)?;
        for r in rows {
            t.push(r)?;
        }
        Ok(t)
    }

    /// Single-channel convenience constructor.
    pub fn from_channel(dt: f64, values: &[f64]) -> Result<Self> {
        let mut t = Self::new(dt, 1)?;
        for &v in values {
            t.push(&[v])?;
        }
        Ok(t)
    }

    pub fn push(&mut self, w: &[f64]) -> Result<()> {
        check_dim(self.n_channels, w.len())?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(CslError::NonFinite("noise sample"));
        }
        self.samples.extend_from_slice(w);
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.samples.len().checked_div(self.n_channels).unwrap_or(0)
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.samples[step * self.n_channels..(step + 1) * self.n_channels]
    }

    pub fn sample(&self, step: usize, channel: usize) -> f64 {
        self.samples[step * self.n_channels + channel]
    }

    pub fn duration(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn to_table(&self) -> Table {
        let mut table = Table::new(&["step", "time", "channel", "w"]);
        for step in 0..self.n_steps() {
            for ch in 0..self.n_channels {
                table.push(vec![
                    step.to_string(),
                    fmt_num(step as f64 * self.dt),
                    ch.to_string(),
                    fmt_num(self.sample(step, ch)),
                ]);
            }
        }
        table
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_table().write_csv(w)
    }
}

/// Log of the measure normalization `C = (2 pi lambda / dt)^(-steps/2)`,
/// taken as a product over channels.
pub fn raw_measure_log_weight(traj: &NoiseTrajectory, lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(CslError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let count = (traj.n_steps() * traj.n_channels()) as f64;
    Ok(-count * 0.5 * (2.0 * PI * lambda / traj.dt()).ln())
}

/// Arithmetic mean of one channel over the record.
pub fn time_average(traj: &NoiseTrajectory, channel: usize) -> Result<f64> {
    if channel >= traj.n_channels() {
        return Err(CslError::OutOfRange { index: channel, limit: traj.n_channels() });
    }
    let n = traj.n_steps();
    if n == 0 {
        return Err(CslError::InvalidParameter("time average of an empty trajectory".into()));
    }
    Ok((0..n).map(|s| traj.sample(s, channel)).sum::<f64>() / n as f64)
}

/// Coefficients as a dense vector (convenience for callers building states in
/// the joint eigenbasis).
pub fn eigenbasis_state(basis: &JointEigenbasis, coeffs: &[C64]) -> Result<QuantumState> {
    check_dim(basis.dim(), coeffs.len())?;
    QuantumState::new(basis.from_eigenbasis(&DVector::from_column_slice(coeffs)))
}

/// Hermitian matrix with independent Gaussian entries, rescaled to the
/// given spectral norm.
pub fn random_hamiltonian(dim: usize, norm: f64, seed: u64) -> Result<HermitianOperator> {
    let mut rng = SeededRng::new(seed, 0);
    let mut h = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        h[(i, i)] = C64::new(rng.standard_normal(), 0.0);
        for j in (i + 1)..dim {
            let z = C64::new(rng.standard_normal(), rng.standard_normal()) / 2f64.sqrt();
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    let h = HermitianOperator::new(h)?;
    let s = h.spectral_norm();
    Ok(if s > 0.0 { h.scaled(norm / s) } else { h })
}
