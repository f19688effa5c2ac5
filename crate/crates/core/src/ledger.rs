//! Expectation-value energy bookkeeping. Collapse raises the particle energy
//! `Tr(H rho)`; the w-field carries the negative of the cumulative gain, laid
//! down site by site where the collapse channels did the work and left there.

use serde::Serialize;

use crate::error::{CslError, Result};
use crate::hilbert::{check_dim, trace_product, CMatrix, DensityMatrix, HermitianOperator};
use crate::master::{step_plan, LindbladModel, MasterIntegrator};
use crate::table::{fmt_num, Table};

/// Relative tolerance on attributed deltas summing to the energy change.
pub const ATTRIBUTION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub t: f64,
    pub particle_energy: f64,
    pub w_field_energy: f64,
    /// w-field energy per site.
    pub w_density: Vec<f64>,
    /// `particle_energy + w_field_energy` at the start.
    pub initial_total: f64,
}

impl EnergyLedger {
    /// A fresh ledger with zero w-field energy.
    pub fn new(rho: &DensityMatrix, h: &HermitianOperator, n_sites: usize) -> Result<Self> {
        let e = rho.expectation(h)?;
        Ok(Self { t: 0.0, particle_energy: e, w_field_energy: 0.0, w_density: vec![0.0; n_sites], initial_total: e })
    }

    pub fn total(&self) -> f64 {
        self.particle_energy + self.w_field_energy
    }

    pub fn w_density_sum(&self) -> f64 {
        self.w_density.iter().sum()
    }

    pub fn min_site_density(&self) -> f64 {
        self.w_density.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_site_density(&self) -> f64 {
        self.w_density.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn scale(&self) -> f64 {
        self.initial_total.abs().max(self.particle_energy.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Advances the ledger to `t_new`. Each site's w-density drops by the
/// particle energy attributed to it; the deltas must account for the whole
/// change in `Tr(H rho)`.
pub fn update_ledger(
    ledger: &EnergyLedger,
    t_new: f64,
    rho_new: &DensityMatrix,
    h: &HermitianOperator,
    site_energy_deltas: &[f64],
) -> Result<EnergyLedger> {
    check_dim(ledger.w_density.len(), site_energy_deltas.len())?;
    let e_new = rho_new.expectation(h)?;
    let actual = e_new - ledger.particle_energy;
    let attributed: f64 = site_energy_deltas.iter().sum();
    if (attributed - actual).abs() > ATTRIBUTION_TOL * ledger.scale() {
        return Err(CslError::AttributionMismatch { attributed, actual });
    }
    let w_density = ledger.w_density.iter().zip(site_energy_deltas).map(|(w, d)| w - d).collect();
    Ok(EnergyLedger {
        t: t_new,
        particle_energy: e_new,
        w_field_energy: ledger.initial_total - e_new,
        w_density,
        initial_total: ledger.initial_total,
    })
}

/// Rate `Tr(H D_k(rho))` at which each collapse channel changes the particle
/// energy, where `D_k` is the channel's double-commutator term.
pub fn channel_energy_rates(model: &LindbladModel, h: &HermitianOperator, rho: &CMatrix) -> Result<Vec<f64>> {
    check_dim(model.dim(), rho.nrows())?;
    check_dim(model.dim(), h.dim())?;
    let lambda = model.lambda();
    model
        .collapse_ops()
        .iter()
        .enumerate()
        .map(|(k, a)| match a.diagonal_entries() {
            // D(rho)_ij = -(lambda/2)(a_i - a_j)^2 rho_ij
            Some(d) => {
                let hm = h.matrix();
                let mut s = 0.0;
                for i in 0..d.len() {
                    for j in 0..d.len() {
                        let diff = d[i] - d[j];
                        if diff != 0.0 {
                            s -= 0.5 * lambda * diff * diff * (hm[(j, i)] * rho[(i, j)]).re;
                        }
                    }
                }
                Ok(s)
            }
            None => Ok(trace_product(h.matrix(), &model.channel_dissipator(k, rho)?).re),
        })
        .collect()
}

/// Splits `delta` across sites in proportion to `contributions`. Returns
/// zeros when the contributions cancel.
pub fn attribute_energy_change(delta: f64, contributions: &[f64]) -> Vec<f64> {
    let total: f64 = contributions.iter().sum();
    let scale: f64 = contributions.iter().map(|c| c.abs()).sum();
    if scale == 0.0 || total.abs() <= 1e-14 * scale {
        return vec![0.0; contributions.len()];
    }
    contributions.iter().map(|c| delta * c / total).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LedgerRecord {
    pub t: f64,
    pub particle_energy: f64,
    pub w_field_energy: f64,
    pub w_density_sum: f64,
    pub min_site_density: f64,
    pub max_site_density: f64,
}

impl From<&EnergyLedger> for LedgerRecord {
    fn from(l: &EnergyLedger) -> Self {
        Self {
            t: l.t,
            particle_energy: l.particle_energy,
            w_field_energy: l.w_field_energy,
            w_density_sum: l.w_density_sum(),
            min_site_density: l.min_site_density(),
            max_site_density: l.max_site_density(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LedgerRun {
    pub records: Vec<LedgerRecord>,
    pub final_ledger: EnergyLedger,
}

impl LedgerRun {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "E_particles", "E_w", "min_site_density", "max_site_density"]);
        for r in &self.records {
            t.push(vec![
                fmt_num(r.t),
                fmt_num(r.particle_energy),
                fmt_num(r.w_field_energy),
                fmt_num(r.min_site_density),
                fmt_num(r.max_site_density),
            ]);
        }
        t
    }

    /// Largest `|E_particles + E_w - E_total(0)|` relative to the energy scale.
    pub fn max_conservation_error(&self) -> f64 {
        let e0 = self.final_ledger.initial_total;
        let scale =
            self.records.iter().map(|r| r.particle_energy.abs()).fold(e0.abs(), f64::max).max(f64::MIN_POSITIVE);
        self.records.iter().map(|r| (r.particle_energy + r.w_field_energy - e0).abs()).fold(0.0, f64::max) / scale
    }
}

/// Integrates the master equation and keeps the ledger, one site per
/// collapse channel, attributing each step's energy change by the channel
/// rates averaged over the step's endpoints. Records every `stride` steps.
pub fn run_ledger(rho0: &DensityMatrix, model: &LindbladModel, t_final: f64, stride: usize) -> Result<LedgerRun> {
    let h = model.hamiltonian();
    let (n, dt) = step_plan(t_final, model.max_dt())?;
    let stride = stride.max(1);
    let mut integ = MasterIntegrator::new(rho0, model, dt)?;
    let mut ledger = EnergyLedger::new(rho0, h, model.collapse_ops().len())?;
    let mut records = vec![LedgerRecord::from(&ledger)];
    let mut rates = channel_energy_rates(model, h, integ.matrix())?;
    for s in 1..=n {
        integ.step();
        let rho = DensityMatrix::from_matrix_unchecked(integ.matrix().clone());
        let new_rates = channel_energy_rates(model, h, rho.matrix())?;
        let mid: Vec<f64> = rates.iter().zip(&new_rates).map(|(a, b)| 0.5 * (a + b)).collect();
        let delta = rho.expectation(h)? - ledger.particle_energy;
        let deltas = attribute_energy_change(delta, &mid);
        ledger = update_ledger(&ledger, s as f64 * dt, &rho, h, &deltas)?;
        rates = new_rates;
        if s % stride == 0 || s == n {
            integ.checked_state()?;
            records.push(LedgerRecord::from(&ledger));
        }
    }
    Ok(LedgerRun { records, final_ledger: ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cosmogenesis::{cell_model, mean_n_csl, xi_fixed_point, CosmoParams};
    use crate::hilbert::{c, QuantumState};

    fn qubit_model(lambda: f64) -> (LindbladModel, DensityMatrix) {
        let mut h = CMatrix::zeros(2, 2);
        h[(0, 0)] = c(0.3);
        h[(0, 1)] = c(0.7);
        h[(1, 0)] = c(0.7);
        h[(1, 1)] = c(-0.2);
        let h = HermitianOperator::new(h).unwrap();
        let a = HermitianOperator::from_real_diagonal(&[0.0, 1.0]).unwrap();
        let b = HermitianOperator::from_real_diagonal(&[2.0, 2.0]).unwrap();
        let rho = DensityMatrix::from_state(&QuantumState::from_real(&[1.0, 0.0]).unwrap()).unwrap();
        (LindbladModel::new(h, vec![a, b], lambda).unwrap(), rho)
    }

    #[test]
    fn no_collapse_leaves_ledger_empty() {
        let (model, rho) = qubit_model(0.0);
        let run = run_ledger(&rho, &model, 3.0, 10).unwrap();
        assert!(run.final_ledger.w_density.iter().all(|w| *w == 0.0));
        assert!(run.max_conservation_error() < 1e-9);
        assert!(run.records.iter().all(|r| r.w_field_energy.abs() < 1e-9));
    }

    #[test]
    fn conservation_and_pinning() {
        let (model, rho) = qubit_model(0.8);
        let run = run_ledger(&rho, &model, 5.0, 7).unwrap();
        assert!(run.max_conservation_error() < 1e-12);
        let l = &run.final_ledger;
        assert!((l.w_density_sum() - l.w_field_energy).abs() < 1e-10 * l.particle_energy.abs().max(1.0));
        // The second channel is proportional to the identity and does no work.
        assert_eq!(l.w_density[1], 0.0);
        let e0 = run.records[0].particle_energy;
        for r in &run.records {
            if r.particle_energy >= e0 {
                assert!(r.w_density_sum <= 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_deltas_rejected() {
        let (model, rho) = qubit_model(0.8);
        let ledger = EnergyLedger::new(&rho, model.hamiltonian(), 2).unwrap();
        let mut integ = MasterIntegrator::new(&rho, &model, 0.01).unwrap();
        for _ in 0..50 {
            integ.step();
        }
        let rho1 = integ.checked_state().unwrap();
        let gain = rho1.expectation(model.hamiltonian()).unwrap() - ledger.particle_energy;
        assert!(update_ledger(&ledger, 0.5, &rho1, model.hamiltonian(), &[gain, 0.0]).is_ok());
        assert!(matches!(
            update_ledger(&ledger, 0.5, &rho1, model.hamiltonian(), &[gain, 1e-6]),
            Err(CslError::AttributionMismatch { .. })
        ));
        assert!(update_ledger(&ledger, 0.5, &rho1, model.hamiltonian(), &[gain]).is_err());
    }

    #[test]
    fn attribution_is_proportional() {
        let d = attribute_energy_change(3.0, &[1.0, 2.0, 0.0]);
        assert_eq!(d, vec![1.0, 2.0, 0.0]);
        assert_eq!(attribute_energy_change(1.0, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn channel_rates_fast_path_matches_dissipator() {
        let (model, rho) = qubit_model(0.8);
        let mut integ = MasterIntegrator::new(&rho, &model, 0.01).unwrap();
        for _ in 0..30 {
            integ.step();
        }
        let fast = channel_energy_rates(&model, model.hamiltonian(), integ.matrix()).unwrap();
        for (k, r) in fast.iter().enumerate() {
            let slow =
                trace_product(model.hamiltonian().matrix(), &model.channel_dissipator(k, integ.matrix()).unwrap()).re;
            assert!((r - slow).abs() < 1e-14);
        }
    }

    #[test]
    fn cosmogenesis_w_energy_tracks_particle_number() {
        let p = CosmoParams { m: 1.0, g: 0.1, cells: 1, lambda: 0.5, total_time: 20.0, n_max: 12 };
        let model = cell_model(&p).unwrap();
        let rho = DensityMatrix::from_state(&QuantumState::basis(p.fock_dim(), 0).unwrap()).unwrap();
        let run = run_ledger(&rho, &model, p.total_time, 1000).unwrap();
        let e_w = run.final_ledger.w_field_energy;
        let mass_energy = p.m * mean_n_csl(&p);
        // Tr(H rho) = m n + 2 g Re<xi>, and <xi> settles near its fixed point.
        let bound = 2.0 * p.g * xi_fixed_point(&p).norm() * 1.5;
        assert!(e_w < 0.0);
        assert!((e_w + mass_energy).abs() < bound, "{e_w} vs {mass_energy}");
    }
}
