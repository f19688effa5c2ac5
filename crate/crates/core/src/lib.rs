//! Numerical laboratory for continuous spontaneous localization (CSL):
//! stochastic collapse trajectories sampled under the norm-squared
//! probability rule, the matching master equation, a lattice model with
//! smeared mass-density collapse operators, a universe-creation toy model,
//! and expectation-value energy bookkeeping.

pub mod constants;
pub mod cosmogenesis;
pub mod dynamics;
pub mod error;
pub mod gamblers_ruin;
pub mod hilbert;
pub mod lattice;
pub mod ledger;
pub mod master;
pub mod noise;
pub mod table;

pub use cosmogenesis::{
    coherent_solution, mean_n_csl, mean_n_numerical, mean_n_schrodinger, moment_ode_oracle, CosmoParams,
};
pub use dynamics::{
    evolve_linear_step, run_ensemble, sample_trajectory, trajectory_probability, CslModel, EnsembleSummary,
    Hamiltonian, TrajectoryRecord,
};
pub use error::{CslError, Result};
pub use gamblers_ruin::{coin_game_frequencies, QuantumGame};
pub use hilbert::{eigendecompose, expectation, CMatrix, CVector, DensityMatrix, HermitianOperator, QuantumState, C64};
pub use lattice::{energy_gain_rate, numerical_energy_gain, smeared_mass_density, LatticeConfig, Wavepacket};
pub use ledger::{attribute_energy_change, run_ledger, update_ledger, EnergyLedger};
pub use master::{analytic_offdiag, integrate_master, lindblad_rhs, LindbladModel, MasterTrajectory};
pub use noise::{
    raw_measure_log_weight, sample_physical_noise_step, time_average, JointEigenbasis, NoiseTrajectory, SeededRng,
};
pub use table::Table;
