use thiserror::Error;

pub type Result<T, E = CslError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CslError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (max |M - M^dagger| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("state is not normalized (squared norm {norm_sq})")]
    NotNormalized { norm_sq: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("collapse operators {first} and {second} do not commute (commutator norm {norm:e})")]
    NonCommuting { first: usize, second: usize, norm: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size violation: {0}")]
    StepSizeViolation(String),

    #[error("density matrix trace {trace} deviates from 1")]
    TraceViolation { trace: f64 },

    #[error("density matrix lost positivity (min eigenvalue {min_eigenvalue:e})")]
    PsdViolation { min_eigenvalue: f64 },

    #[error("state norm underflowed at step {step}; reduce dt")]
    NormUnderflow { step: usize },

    #[error("Fock truncation overflow: top-level occupancy {occupancy:e} exceeds {limit:e}")]
    TruncationOverflow { occupancy: f64, limit: f64 },

    #[error("lattice resolution violation: {0}")]
    ResolutionViolation(String),

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("site energy deltas sum to {attributed:e} but particle energy changed by {actual:e}")]
    AttributionMismatch { attributed: f64, actual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
