//! Fixtures shared by the benchmarks. Each builder is deterministic so runs
//! compare like with like.

use csl_core::cosmogenesis::CosmoParams;
use csl_core::noise::random_hamiltonian;
use csl_core::{CslModel, DensityMatrix, HermitianOperator, LindbladModel, QuantumState, Result};

/// Position-like collapse operator `diag(0, 1, ..., dim - 1) / dim`.
pub fn position_operator(dim: usize) -> Result<HermitianOperator> {
    let diag: Vec<f64> = (0..dim).map(|i| i as f64 / dim as f64).collect();
    HermitianOperator::from_real_diagonal(&diag)
}

/// Uniform superposition over `dim` levels.
pub fn uniform_state(dim: usize) -> Result<QuantumState> {
    QuantumState::from_real(&vec![1.0; dim])?.normalized()
}

/// Random Hamiltonian plus one diagonal collapse channel.
pub fn csl_model(dim: usize, n_steps: usize) -> Result<CslModel> {
    let h = random_hamiltonian(dim, 1.0, 7)?;
    CslModel::new(h, vec![position_operator(dim)?], 1.0, 0.01, n_steps)
}

/// Same physics as [`csl_model`] for the master equation, with a
/// non-diagonal second channel so the general path is exercised.
pub fn lindblad_model(dim: usize) -> Result<LindbladModel> {
    let h = random_hamiltonian(dim, 1.0, 7)?;
    let mixed = random_hamiltonian(dim, 0.5, 8)?;
    LindbladModel::new(h, vec![position_operator(dim)?, mixed], 1.0)
}

pub fn pure_density(dim: usize) -> Result<DensityMatrix> {
    DensityMatrix::from_state(&uniform_state(dim)?)
}

pub fn cosmo_params(lambda: f64, total_time: f64) -> CosmoParams {
    CosmoParams { m: 1.0, g: 0.1, cells: 1, lambda, total_time, n_max: 16 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(csl_model(8, 10).unwrap().dim(), 8);
        assert_eq!(lindblad_model(8).unwrap().dim(), 8);
        assert!((pure_density(4).unwrap().purity() - 1.0).abs() < 1e-12);
        cosmo_params(0.5, 1.0).validate().unwrap();
    }
}
