//! Finite-dimensional quantum linear algebra: state vectors, Hermitian
//! operators with a cached eigendecomposition, and density matrices.
//!
//! Everything here is dense. Dimensions are expected to stay at desk scale
//! (a few hundred at most).

use std::cmp::Ordering;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{CslError, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Squared-norm tolerance for a state to count as normalized.
pub const NORMALIZED_TOL: f64 = 1e-12;
/// Relative Hermiticity tolerance for operators.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-9;
/// Absolute Hermiticity tolerance for density matrices.
pub const DENSITY_HERMITIAN_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a density matrix.
pub const PSD_TOL: f64 = -1e-8;

#[inline]
pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest entrywise modulus of `m`.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Largest entrywise modulus of `m - m^dagger`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// `(m + m^dagger) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// A complex amplitude vector over a finite labeled basis.
///
/// States produced by the collapse dynamics are generally unnormalized;
/// their norm is carried by the amplitudes themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    amplitudes: CVector,
}

impl QuantumState {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(CslError::InvalidParameter("state must have dimension >= 1".into()));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CslError::NonFinite("state amplitudes"));
        }
        Ok(Self { amplitudes })
    }

    pub fn from_complex(amplitudes: &[C64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(amplitudes))
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(CVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|&x| c(x))))
    }

    /// Basis vector `|index>` in a space of dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(CslError::OutOfRange { index, limit: dim });
        }
        let mut v = CVector::zeros(dim);
        v[index] = c(1.0);
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sq() - 1.0).abs() <= NORMALIZED_TOL
    }

    pub fn normalized(&self) -> Result<Self> {
        let n2 = self.norm_sq();
        if n2 == 0.0 || !n2.is_finite() {
            return Err(CslError::ZeroNorm);
        }
        Ok(Self { amplitudes: &self.amplitudes * c(n2.sqrt().recip()) })
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self { amplitudes: &self.amplitudes * factor }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &QuantumState) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// Normalized projector `|psi><psi| / <psi|psi>`.
    pub fn projector(&self) -> Result<CMatrix> {
        let n2 = self.norm_sq();
        if n2 == 0.0 {
            return Err(CslError::ZeroNorm);
        }
        Ok(&self.amplitudes * self.amplitudes.adjoint() * c(n2.recip()))
    }

    pub fn tensor(&self, other: &QuantumState) -> QuantumState {
        Self { amplitudes: self.amplitudes.kronecker(&other.amplitudes) }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(CslError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Eigenvalues in ascending order with the matching unitary eigenvector
/// matrix (one eigenvector per column).
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

/// A dense Hermitian matrix. The eigendecomposition is computed on first use
/// and cached.
#[derive(Clone, Debug)]
pub struct HermitianOperator {
    matrix: CMatrix,
    eigen: OnceLock<Eigen>,
}

impl PartialEq for HermitianOperator {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl HermitianOperator {
    /// Validates Hermiticity to `HERMITIAN_TOL` relative to the largest entry
    /// and stores the exactly Hermitian part.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(CslError::NotSquare { rows: matrix.nrows(), cols: matrix.ncols() });
        }
        if matrix.nrows() == 0 {
            return Err(CslError::InvalidParameter("operator must have dimension >= 1".into()));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CslError::NonFinite("operator matrix"));
        }
        let dev = hermitian_deviation(&matrix);
        if dev > HERMITIAN_TOL * max_abs(&matrix) {
            return Err(CslError::NotHermitian { deviation: dev });
        }
        Ok(Self { matrix: hermitian_part(&matrix), eigen: OnceLock::new() })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let d = CVector::from_iterator(diag.len(), diag.iter().map(|&x| c(x)));
        Self::new(CMatrix::from_diagonal(&d))
    }

    pub fn zeros(dim: usize) -> Self {
        Self { matrix: CMatrix::zeros(dim, dim), eigen: OnceLock::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: CMatrix::identity(dim, dim), eigen: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| *z == C64::default())
    }

    /// Real diagonal if every off-diagonal entry is exactly zero.
    pub fn diagonal_entries(&self) -> Option<Vec<f64>> {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                if i != j && self.matrix[(i, j)] != C64::default() {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self.matrix[(i, i)].re).collect())
    }

    pub fn eigen(&self) -> &Eigen {
        self.eigen.get_or_init(|| compute_eigen(&self.matrix))
    }

    /// Largest eigenvalue modulus.
    pub fn spectral_norm(&self) -> f64 {
        let e = &self.eigen().values;
        e[0].abs().max(e[e.len() - 1].abs())
    }

    /// Difference between largest and smallest eigenvalue.
    pub fn spread(&self) -> f64 {
        let e = &self.eigen().values;
        e[e.len() - 1] - e[0]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { matrix: &self.matrix * c(factor), eigen: OnceLock::new() }
    }

    pub fn add(&self, other: &HermitianOperator) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self { matrix: &self.matrix + &other.matrix, eigen: OnceLock::new() })
    }

    pub fn kron(&self, other: &HermitianOperator) -> Self {
        Self { matrix: kron(&self.matrix, &other.matrix), eigen: OnceLock::new() }
    }

    /// Frobenius norm of `[self, other]`.
    pub fn commutator_norm(&self, other: &HermitianOperator) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(commutator(&self.matrix, &other.matrix).norm())
    }

    /// `exp(-i H t)` via the eigendecomposition.
    pub fn unitary_propagator(&self, t: f64) -> CMatrix {
        let Eigen { values, vectors } = self.eigen();
        let phases = CVector::from_iterator(values.len(), values.iter().map(|&e| C64::from_polar(1.0, -e * t)));
        let mut scaled = vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * vectors.adjoint()
    }
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian operator.
pub fn eigendecompose(op: &HermitianOperator) -> (DVector<f64>, CMatrix) {
    let e = op.eigen();
    (e.values.clone(), e.vectors.clone())
}

fn compute_eigen(matrix: &CMatrix) -> Eigen {
    let n = matrix.nrows();
    let SymmetricEigen { eigenvalues, eigenvectors } = SymmetricEigen::new(matrix.clone());
    let scale = eigenvalues.iter().fold(0.0_f64, |a, &e| a.max(e.abs())).max(f64::MIN_POSITIVE);
    let tie = 1e-12 * scale;

    let mut cols: Vec<(f64, CVector)> = (0..n)
        .map(|j| {
            let mut v = eigenvectors.column(j).into_owned();
            fix_phase(&mut v);
            (eigenvalues[j], v)
        })
        .collect();
    // Ascending; near-degenerate eigenvalues are ordered by their
    // phase-fixed eigenvectors so that the result does not depend on the
    // order the solver happened to return them in.
    cols.sort_by(|(ea, va), (eb, vb)| {
        if (ea - eb).abs() > tie {
            ea.partial_cmp(eb).unwrap_or(Ordering::Equal)
        } else {
            lexicographic(va, vb)
        }
    });

    let values = DVector::from_iterator(n, cols.iter().map(|(e, _)| *e));
    let mut vectors = CMatrix::zeros(n, n);
    for (j, (_, v)) in cols.iter().enumerate() {
        vectors.set_column(j, v);
    }
    Eigen { values, vectors }
}

const PHASE_EPS: f64 = 1e-10;

/// Rotate `v` so that its first non-negligible component is positive real.
fn fix_phase(v: &mut CVector) {
    if let Some(first) = v.iter().find(|z| z.norm() > PHASE_EPS).copied() {
        let rot = first.conj() / first.norm();
        *v *= rot;
    }
}

/// Earlier leading component first, then larger leading magnitude.
fn lexicographic(a: &CVector, b: &CVector) -> Ordering {
    let lead = |v: &CVector| {
        v.iter().enumerate().find(|(_, z)| z.norm() > PHASE_EPS).map(|(i, z)| (i, z.re)).unwrap_or((usize::MAX, 0.0))
    };
    let (ia, ra) = lead(a);
    let (ib, rb) = lead(b);
    ia.cmp(&ib).then_with(|| rb.partial_cmp(&ra).unwrap_or(Ordering::Equal))
}

/// `<psi|op|psi> / <psi|psi>`.
pub fn expectation(state: &QuantumState, op: &HermitianOperator) -> Result<f64> {
    check_dim(op.dim(), state.dim())?;
    let n2 = state.norm_sq();
    if n2 == 0.0 {
        return Err(CslError::ZeroNorm);
    }
    let psi = state.amplitudes();
    let value = psi.dotc(&(op.matrix() * psi));
    Ok(value.re / n2)
}

/// A positive-semidefinite, unit-trace, Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(CslError::NotSquare { rows: matrix.nrows(), cols: matrix.ncols() });
        }
        let dev = hermitian_deviation(&matrix);
        if dev > DENSITY_HERMITIAN_TOL {
            return Err(CslError::NotHermitian { deviation: dev });
        }
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(CslError::TraceViolation { trace });
        }
        let rho = Self { matrix: hermitian_part(&matrix) };
        let min = rho.min_eigenvalue();
        if min < PSD_TOL {
            return Err(CslError::PsdViolation { min_eigenvalue: min });
        }
        Ok(rho)
    }

    pub fn from_state(state: &QuantumState) -> Result<Self> {
        Ok(Self { matrix: state.projector()? })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: CMatrix::identity(dim, dim) * c(1.0 / dim as f64) }
    }

    /// Skips validation; used by integrators that monitor the invariants
    /// themselves.
    pub(crate) fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(hermitian_part(&self.matrix)).eigenvalues.iter().fold(f64::INFINITY, |a, &e| a.min(e))
    }

    /// `Re Tr(op rho)`.
    pub fn expectation(&self, op: &HermitianOperator) -> Result<f64> {
        check_dim(op.dim(), self.dim())?;
        Ok(trace_product(op.matrix(), &self.matrix).re)
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.matrix, &self.matrix).re
    }
}

/// `Tr(a b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::default();
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}
