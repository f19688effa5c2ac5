//! The named experiments. Each takes its parameter struct and a seed and
//! returns tables, a JSON summary and its built-in checks; nothing here
//! touches the filesystem.

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use csl_core::constants::{GRW_LAMBDA, GRW_SMEARING, HBAR, JULIAN_YEAR, PROTON_MASS, SPEED_OF_LIGHT, UNIVERSE_AGE};
use csl_core::cosmogenesis::{self, CosmoParams};
use csl_core::hilbert::{DensityMatrix, HermitianOperator, QuantumState};
use csl_core::lattice::{self, LatticeConfig, UnitSystem, Wavepacket};
use csl_core::master::{analytic_offdiag, integrate_master_strided, LindbladModel};
use csl_core::noise::SeededRng;
use csl_core::table::{fmt_num, Table};
use csl_core::{
    coin_game_frequencies, ledger, run_ensemble, sample_trajectory, CslModel, EnsembleSummary, QuantumGame, C64,
};

use crate::config::{Experiment, RunConfig};

/// One built-in check and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: value <= threshold, value, threshold, detail: detail.into() }
    }
}

/// A named table; written as `<name>.csv` (and `<name>.dat` for plotting).
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub name: String,
    pub table: Table,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub outputs: Vec<Output>,
    pub summary: Value,
    pub checks: Vec<Check>,
}

impl Report {
    fn table(&mut self, name: impl Into<String>, table: Table) {
        self.outputs.push(Output { name: name.into(), table });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GamblersRuinParams {
    pub stake_a: u64,
    pub stake_b: u64,
    pub n_games: usize,
    pub n_traj: usize,
    pub lambda: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Allowed `|frequency - expected|`.
    pub tolerance: f64,
    /// Record every this many steps in `branch_weights`.
    pub stride: usize,
}

impl Default for GamblersRuinParams {
    fn default() -> Self {
        Self {
            stake_a: 60,
            stake_b: 40,
            n_games: 10_000,
            n_traj: 10_000,
            lambda: 1.0,
            dt: 0.05,
            n_steps: 1000,
            tolerance: 0.015,
            stride: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseEnsembleParams {
    /// Real initial amplitudes; must be normalized.
    pub amplitudes: Vec<f64>,
    /// Eigenvalues of the diagonal collapse operator.
    pub eigenvalues: Vec<f64>,
    pub lambda: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    /// Number of individual trajectories written out.
    pub saved_trajectories: usize,
    pub stride: usize,
}

impl Default for CollapseEnsembleParams {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.5, 0.5, std::f64::consts::FRAC_1_SQRT_2],
            eigenvalues: vec![0.0, 1.0, 2.0],
            lambda: 1.0,
            dt: 0.01,
            n_steps: 3000,
            n_traj: 10_000,
            saved_trajectories: 3,
            stride: 30,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterVsEnsembleParams {
    pub amplitudes: Vec<f64>,
    /// Diagonals of the commuting collapse operators.
    pub collapse_diagonals: Vec<Vec<f64>>,
    /// Spectral norm of the random Hamiltonian.
    pub h_norm: f64,
    /// Seed of the random Hamiltonian (independent of the run seed).
    pub h_seed: u64,
    pub lambda: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    /// Compare every this many steps.
    pub record_every: usize,
    /// Allowed deviation in standard errors.
    pub max_z: f64,
}

impl Default for MasterVsEnsembleParams {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.5; 4],
            collapse_diagonals: vec![vec![0.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 1.0]],
            h_norm: 1.0,
            h_seed: 2024,
            lambda: 1.0,
            dt: 0.005,
            n_steps: 200,
            n_traj: 10_000,
            record_every: 20,
            max_z: 5.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffdiagDecayParams {
    pub amplitudes: [f64; 2],
    pub eigenvalues: [f64; 2],
    pub lambda: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub checkpoints: usize,
    /// Largest master-equation step; the run uses `dt / k` for the smallest
    /// integer `k` meeting this and the step rule.
    pub master_dt: f64,
    pub max_z: f64,
    pub master_rel_tol: f64,
}

impl Default for OffdiagDecayParams {
    fn default() -> Self {
        Self {
            amplitudes: [std::f64::consts::FRAC_1_SQRT_2; 2],
            eigenvalues: [0.0, 1.0],
            lambda: 1.0,
            dt: 0.05,
            n_steps: 80,
            n_traj: 10_000,
            checkpoints: 10,
            master_dt: 0.005,
            max_z: 5.0,
            master_rel_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeEnergyParams {
    pub n_sites: usize,
    /// Lattice spacing in units of the smearing length.
    pub spacing_over_a: f64,
    /// Particle mass in units of the proton mass.
    pub mass_ratio: f64,
    /// Collapse rates in model units (`hbar / (m0 a^2)`).
    pub lambdas_model: Vec<f64>,
    /// Wavepacket widths in units of `a`; the first is used for the rate
    /// sweep, the rest at `width_lambda_model`.
    pub widths_over_a: Vec<f64>,
    pub width_lambda_model: f64,
    pub t_final_model: f64,
    pub rate_tol: f64,
    pub linearity_tol: f64,
    pub width_tol: f64,
}

impl Default for LatticeEnergyParams {
    fn default() -> Self {
        Self {
            n_sites: 64,
            spacing_over_a: 0.25,
            mass_ratio: 1.0,
            lambdas_model: vec![0.05, 0.1, 0.2],
            widths_over_a: vec![1.0, 2.0],
            width_lambda_model: 0.1,
            t_final_model: 2.0,
            rate_tol: 0.1,
            linearity_tol: 0.02,
            width_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosmoSweepParams {
    pub m: f64,
    pub g: f64,
    pub cells: usize,
    pub n_max: usize,
    pub lambdas: Vec<f64>,
    pub times: Vec<f64>,
    pub unitary_tol: f64,
    pub csl_tol: f64,
}

impl Default for CosmoSweepParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            g: 0.1,
            cells: 1,
            n_max: 16,
            lambdas: vec![0.0, 0.1, 0.5, 2.0],
            times: vec![1.0, 2.0, 5.0, 10.0, 20.0],
            unitary_tol: 1e-6,
            csl_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZenoSweepParams {
    pub m: f64,
    pub g: f64,
    pub total_time: f64,
    /// Log-spaced grid of the closed-form sweep.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_lambda: usize,
    /// Rates integrated numerically; `m` and `1000 m` are always included.
    pub numerical_lambdas: Vec<f64>,
    pub n_max: usize,
    pub suppression: f64,
}

impl Default for ZenoSweepParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            g: 0.1,
            total_time: 2.0,
            lambda_min: 0.01,
            lambda_max: 1e4,
            n_lambda: 61,
            numerical_lambdas: vec![1.0, 10.0, 100.0, 1000.0],
            n_max: 6,
            suppression: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsCheckParams {
    /// Particle mass in units of the proton mass.
    pub mass_ratio: f64,
    /// Collapse rate, 1/s.
    pub lambda: f64,
    /// Smearing length, m.
    pub a: f64,
    /// Elapsed time, s.
    pub time: f64,
    pub expected_ratio: f64,
    /// Allowed multiplicative deviation from `expected_ratio`.
    pub factor: f64,
}

impl Default for ConstantsCheckParams {
    fn default() -> Self {
        Self {
            mass_ratio: 1.0,
            lambda: GRW_LAMBDA,
            a: GRW_SMEARING,
            time: UNIVERSE_AGE,
            expected_ratio: 1e-16,
            factor: 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerDemoParams {
    pub lattice_sites: usize,
    pub lattice_spacing_over_a: f64,
    pub lattice_lambda_model: f64,
    pub lattice_width_over_a: f64,
    pub lattice_t_final_model: f64,
    pub cosmo_m: f64,
    pub cosmo_g: f64,
    pub cosmo_lambda: f64,
    pub cosmo_total_time: f64,
    pub cosmo_n_max: usize,
    /// Roughly this many ledger records per run.
    pub records: usize,
    pub conservation_tol: f64,
}

impl Default for LedgerDemoParams {
    fn default() -> Self {
        Self {
            lattice_sites: 32,
            lattice_spacing_over_a: 0.25,
            lattice_lambda_model: 0.2,
            lattice_width_over_a: 1.0,
            lattice_t_final_model: 2.0,
            cosmo_m: 1.0,
            cosmo_g: 0.1,
            cosmo_lambda: 0.5,
            cosmo_total_time: 20.0,
            cosmo_n_max: 12,
            records: 200,
            conservation_tol: 1e-9,
        }
    }
}

fn to_value<T: Serialize>(p: T) -> Value {
    serde_json::to_value(p).expect("parameter structs serialize")
}

pub fn default_parameters(e: Experiment) -> Value {
    match e {
        Experiment::GamblersRuin => to_value(GamblersRuinParams::default()),
        Experiment::CollapseEnsemble => to_value(CollapseEnsembleParams::default()),
        Experiment::MasterVsEnsemble => to_value(MasterVsEnsembleParams::default()),
        Experiment::OffdiagDecay => to_value(OffdiagDecayParams::default()),
        Experiment::LatticeEnergy => to_value(LatticeEnergyParams::default()),
        Experiment::CosmoSweep => to_value(CosmoSweepParams::default()),
        Experiment::ZenoSweep => to_value(ZenoSweepParams::default()),
        Experiment::ConstantsCheck => to_value(ConstantsCheckParams::default()),
        Experiment::LedgerDemo => to_value(LedgerDemoParams::default()),
    }
}

fn parse<T: DeserializeOwned>(e: Experiment, v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).with_context(|| format!("invalid parameters for {e}"))
}

pub fn validate_parameters(e: Experiment, v: &Value) -> Result<()> {
    match e {
        Experiment::GamblersRuin => parse::<GamblersRuinParams>(e, v).map(drop),
        Experiment::CollapseEnsemble => parse::<CollapseEnsembleParams>(e, v).map(drop),
        Experiment::MasterVsEnsemble => parse::<MasterVsEnsembleParams>(e, v).map(drop),
        Experiment::OffdiagDecay => parse::<OffdiagDecayParams>(e, v).map(drop),
        Experiment::LatticeEnergy => parse::<LatticeEnergyParams>(e, v).map(drop),
        Experiment::CosmoSweep => parse::<CosmoSweepParams>(e, v).map(drop),
        Experiment::ZenoSweep => parse::<ZenoSweepParams>(e, v).map(drop),
        Experiment::ConstantsCheck => parse::<ConstantsCheckParams>(e, v).map(drop),
        Experiment::LedgerDemo => parse::<LedgerDemoParams>(e, v).map(drop),
    }
}

/// Runs the configured experiment.
pub fn run(cfg: &RunConfig) -> Result<Report> {
    let e = cfg.experiment;
    let p = &cfg.parameters;
    let report = match e {
        Experiment::GamblersRuin => gamblers_ruin(&parse(e, p)?, cfg.seed),
        Experiment::CollapseEnsemble => collapse_ensemble(&parse(e, p)?, cfg.seed),
        Experiment::MasterVsEnsemble => master_vs_ensemble(&parse(e, p)?, cfg.seed),
        Experiment::OffdiagDecay => offdiag_decay(&parse(e, p)?, cfg.seed),
        Experiment::LatticeEnergy => lattice_energy(&parse(e, p)?),
        Experiment::CosmoSweep => cosmo_sweep(&parse(e, p)?),
        Experiment::ZenoSweep => zeno_sweep(&parse(e, p)?),
        Experiment::ConstantsCheck => constants_check(&parse(e, p)?),
        Experiment::LedgerDemo => ledger_demo(&parse(e, p)?),
    };
    report.with_context(|| format!("experiment {e} failed"))
}

fn branch_weight_table(ens: &EnsembleSummary, stride: usize) -> Table {
    let mut t = Table::new(&["step", "time", "branch", "mean_weight", "std_error"]);
    let stride = stride.max(1);
    for (s, (w, se)) in ens.mean_branch_weights.iter().zip(&ens.branch_weight_std_errors).enumerate() {
        if s % stride != 0 && s != ens.n_steps {
            continue;
        }
        for b in 0..w.len() {
            t.push(vec![s.to_string(), fmt_num(s as f64 * ens.dt), b.to_string(), fmt_num(w[b]), fmt_num(se[b])]);
        }
    }
    t
}

pub fn gamblers_ruin(p: &GamblersRuinParams, seed: u64) -> Result<Report> {
    let coin = coin_game_frequencies(p.stake_a, p.stake_b, p.n_games, seed)?;
    let game = QuantumGame {
        stake_a: p.stake_a as f64,
        stake_b: p.stake_b as f64,
        lambda: p.lambda,
        dt: p.dt,
        n_steps: p.n_steps,
    };
    let ens = game.run(p.n_traj, seed)?;
    let expected = coin.expected_frequency_a();
    let mut r = Report::default();
    r.table("coin_game", coin.to_table());
    r.table("quantum_outcomes", ens.outcome_table());
    r.table("branch_weights", branch_weight_table(&ens, p.stride));
    let fq = ens.outcome_frequencies[0];
    r.checks.push(Check::at_most(
        "quantum_win_frequency",
        (fq - expected).abs(),
        p.tolerance,
        format!("branch 0 frequency {fq:.4} vs stake fraction {expected:.4}"),
    ));
    r.checks.push(Check::at_most(
        "coin_win_frequency",
        (coin.win_frequency_a - expected).abs(),
        p.tolerance,
        format!("gambler a won {:.4} of games vs {expected:.4}", coin.win_frequency_a),
    ));
    let unc = ens.uncollapsed as f64 / p.n_traj as f64;
    r.checks.push(Check::at_most(
        "uncollapsed_fraction",
        unc,
        0.01,
        format!("{} runs did not collapse", ens.uncollapsed),
    ));
    r.summary = json!({ "coin_game": coin, "quantum": ens.stats() });
    Ok(r)
}

pub fn collapse_ensemble(p: &CollapseEnsembleParams, seed: u64) -> Result<Report> {
    if p.amplitudes.len() != p.eigenvalues.len() {
        bail!("amplitudes ({}) and eigenvalues ({}) differ in length", p.amplitudes.len(), p.eigenvalues.len());
    }
    let psi = QuantumState::from_real(&p.amplitudes)?;
    let a = HermitianOperator::from_real_diagonal(&p.eigenvalues)?;
    let dim = p.amplitudes.len();
    let model = CslModel::new(HermitianOperator::zeros(dim), vec![a], p.lambda, p.dt, p.n_steps)?;
    let ens = run_ensemble(&psi, &model, p.n_traj, seed)?;
    let mut r = Report::default();
    r.table("outcomes", ens.outcome_table());
    r.table("branch_weights", branch_weight_table(&ens, p.stride));
    // Trajectory i of the ensemble used stream i; these are the same runs.
    for i in 0..p.saved_trajectories.min(p.n_traj) {
        let rec = sample_trajectory(&psi, &model, &mut SeededRng::new(seed, i as u64))?;
        r.table(format!("trajectory_{i}"), rec.to_table());
        r.table(format!("noise_{i}"), rec.noise.to_table());
    }
    let n = p.n_traj as f64;
    let born = model.basis().branch_weights(psi.amplitudes());
    let mut worst: f64 = 0.0;
    for (f, w) in ens.outcome_frequencies.iter().zip(&born) {
        let se = (w * (1.0 - w) / n).sqrt();
        let z = if se > 0.0 {
            (f - w).abs() / se
        } else if (f - w).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    r.checks.push(Check::at_most("born_frequencies_z", worst, 5.0, "largest |frequency - |c_n|^2| in binomial SEs"));
    let unc = ens.uncollapsed as f64 / n;
    r.checks.push(Check::at_most(
        "uncollapsed_fraction",
        unc,
        0.01,
        format!("{} runs did not collapse", ens.uncollapsed),
    ));
    r.summary = json!({ "ensemble": ens.stats(), "born_weights": born });
    Ok(r)
}

/// Master-equation substeps per ensemble step so that `dt / k` meets both
/// `max_dt` and the model's step rule.
fn substeps(dt: f64, max_dt: f64, model: &LindbladModel) -> usize {
    (dt / max_dt.min(model.max_dt())).ceil().max(1.0) as usize
}

pub fn master_vs_ensemble(p: &MasterVsEnsembleParams, seed: u64) -> Result<Report> {
    let dim = p.amplitudes.len();
    let psi = QuantumState::from_real(&p.amplitudes)?;
    let ops = p
        .collapse_diagonals
        .iter()
        .map(|d| HermitianOperator::from_real_diagonal(d))
        .collect::<csl_core::Result<Vec<_>>>()?;
    let h = csl_core::noise::random_hamiltonian(dim, p.h_norm, p.h_seed)?;
    let model = CslModel::new(h.clone(), ops.clone(), p.lambda, p.dt, p.n_steps)?;
    let ens = run_ensemble(&psi, &model, p.n_traj, seed)?;

    let master = LindbladModel::new(h, ops, p.lambda)?;
    let k = substeps(p.dt, p.dt, &master);
    let every = p.record_every.max(1);
    let rho0 = DensityMatrix::from_state(&psi)?;
    let traj = integrate_master_strided(&rho0, &master, p.n_steps as f64 * p.dt, p.dt / k as f64, k * every)?;

    let mut t = Table::new(&[
        "step",
        "time",
        "row",
        "col",
        "ensemble_re",
        "ensemble_im",
        "se_re",
        "se_im",
        "master_re",
        "master_im",
        "z",
    ]);
    let mut worst: f64 = 0.0;
    for (j, step) in (0..=p.n_steps).step_by(every).enumerate() {
        let m = &ens.projector_mean[step];
        let se = &ens.projector_std_err[step];
        let exact = traj.states[j].matrix();
        for r in 0..dim {
            for c in 0..dim {
                let d = m[(r, c)] - exact[(r, c)];
                let z = zscore(d.re, se[(r, c)].re).max(zscore(d.im, se[(r, c)].im));
                worst = worst.max(z);
                t.push(vec![
                    step.to_string(),
                    fmt_num(step as f64 * p.dt),
                    r.to_string(),
                    c.to_string(),
                    fmt_num(m[(r, c)].re),
                    fmt_num(m[(r, c)].im),
                    fmt_num(se[(r, c)].re),
                    fmt_num(se[(r, c)].im),
                    fmt_num(exact[(r, c)].re),
                    fmt_num(exact[(r, c)].im),
                    fmt_num(z),
                ]);
            }
        }
    }
    let mut r = Report::default();
    r.table("comparison", t);
    r.checks.push(Check::at_most("max_entry_z", worst, p.max_z, "ensemble projector vs master equation, in SEs"));
    r.summary = json!({ "ensemble": ens.stats(), "master_substeps": k });
    Ok(r)
}

/// `|d| / se`, with differences at rounding level counted as zero when the
/// standard error vanishes.
pub fn zscore(d: f64, se: f64) -> f64 {
    if se > 0.0 {
        d.abs() / se
    } else if d.abs() <= 1e-9 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn offdiag_decay(p: &OffdiagDecayParams, seed: u64) -> Result<Report> {
    if p.checkpoints == 0 || !p.n_steps.is_multiple_of(p.checkpoints) {
        bail!("n_steps ({}) must be a positive multiple of checkpoints ({})", p.n_steps, p.checkpoints);
    }
    let psi = QuantumState::from_real(&p.amplitudes)?;
    let a = HermitianOperator::from_real_diagonal(&p.eigenvalues)?;
    let model = CslModel::new(HermitianOperator::zeros(2), vec![a.clone()], p.lambda, p.dt, p.n_steps)?;
    let ens = run_ensemble(&psi, &model, p.n_traj, seed)?;
    let master = LindbladModel::new(HermitianOperator::zeros(2), vec![a], p.lambda)?;
    let k = substeps(p.dt, p.master_dt, &master);
    let every = p.n_steps / p.checkpoints;
    let rho0 = DensityMatrix::from_state(&psi)?;
    let traj = integrate_master_strided(&rho0, &master, p.n_steps as f64 * p.dt, p.dt / k as f64, k * every)?;

    let (c0, c1) = (C64::new(p.amplitudes[0], 0.0), C64::new(p.amplitudes[1], 0.0));
    let mut t = Table::new(&["t", "analytic", "ensemble", "ensemble_se", "master", "master_rel_err"]);
    let (mut worst_z, mut worst_rel): (f64, f64) = (0.0, 0.0);
    for j in 1..=p.checkpoints {
        let step = j * every;
        let time = step as f64 * p.dt;
        let exact = analytic_offdiag(c0, c1, p.eigenvalues[0], p.eigenvalues[1], p.lambda, time);
        let e = ens.projector_mean[step][(0, 1)];
        let se = ens.projector_std_err[step][(0, 1)];
        let se_abs = se.re.hypot(se.im);
        let dev = (e.norm() - exact.norm()).abs();
        let z = if dev <= 1e-9 { 0.0 } else { zscore(dev, se_abs) };
        worst_z = worst_z.max(z);
        let m = traj.states[j].matrix()[(0, 1)];
        let rel = (m - exact).norm() / exact.norm();
        worst_rel = worst_rel.max(rel);
        t.push(vec![
            fmt_num(time),
            fmt_num(exact.norm()),
            fmt_num(e.norm()),
            fmt_num(se_abs),
            fmt_num(m.norm()),
            fmt_num(rel),
        ]);
    }
    let mut r = Report::default();
    r.table("decay", t);
    r.checks.push(Check::at_most("ensemble_z", worst_z, p.max_z, "|rho_01| ensemble vs closed form, in SEs"));
    r.checks.push(Check::at_most("master_rel_err", worst_rel, p.master_rel_tol, "master equation vs closed form"));
    r.summary = json!({ "ensemble": ens.stats(), "master_substeps": k });
    Ok(r)
}

struct LatticeRun {
    lambda_model: f64,
    width: f64,
    traj: lattice::EnergyTrajectory,
    lambda_si: f64,
    expected: f64,
}

fn lattice_run(p: &LatticeEnergyParams, lambda_model: f64, width: f64) -> Result<LatticeRun> {
    let spacing = p.spacing_over_a * GRW_SMEARING;
    let mass = p.mass_ratio * PROTON_MASS;
    let cfg = LatticeConfig::grw(p.n_sites, 1, spacing, vec![mass]).with_model_lambda(lambda_model);
    let units = UnitSystem::for_lattice(&cfg);
    let center = 0.5 * p.n_sites as f64 * spacing;
    let packet = Wavepacket::at_rest(vec![center], width * GRW_SMEARING);
    let traj = lattice::numerical_energy_gain(&cfg, &packet, p.t_final_model * units.time)?;
    let expected = lattice::energy_gain_rate_axes(mass, cfg.lambda, GRW_SMEARING, PROTON_MASS, 1);
    Ok(LatticeRun { lambda_model, width, traj, lambda_si: cfg.lambda, expected })
}

pub fn lattice_energy(p: &LatticeEnergyParams) -> Result<Report> {
    let Some((&w0, other_widths)) = p.widths_over_a.split_first() else {
        bail!("widths_over_a must not be empty");
    };
    if p.lambdas_model.len() < 2 {
        bail!("lambdas_model needs at least two rates for the linearity check");
    }
    let mut specs: Vec<(f64, f64)> = p.lambdas_model.iter().map(|&l| (l, w0)).collect();
    specs.extend(other_widths.iter().map(|&w| (p.width_lambda_model, w)));
    let runs = specs.par_iter().map(|&(l, w)| lattice_run(p, l, w)).collect::<Result<Vec<_>>>()?;

    let mut r = Report::default();
    let mut slopes = Table::new(&["lambda_model", "lambda_si", "width_over_a", "slope", "expected", "rel_err"]);
    let mut worst_rate: f64 = 0.0;
    for (i, run) in runs.iter().enumerate() {
        let s = run.traj.slope();
        let rel = (s / run.expected - 1.0).abs();
        worst_rate = worst_rate.max(rel);
        slopes.push(vec![
            fmt_num(run.lambda_model),
            fmt_num(run.lambda_si),
            fmt_num(run.width),
            fmt_num(s),
            fmt_num(run.expected),
            fmt_num(rel),
        ]);
        r.table(format!("energy_{i}"), run.traj.to_table());
    }
    r.table("slopes", slopes);

    let n = p.lambdas_model.len();
    let xs: Vec<f64> = runs[..n].iter().map(|r| r.lambda_si).collect();
    let ys: Vec<f64> = runs[..n].iter().map(|r| r.traj.slope()).collect();
    let (k, b) = lattice::linear_fit(&xs, &ys);
    let lin = xs.iter().zip(&ys).map(|(x, y)| ((k * x + b) - y).abs() / y.abs()).fold(0.0, f64::max);
    r.checks.push(Check::at_most(
        "rate_vs_1d_formula",
        worst_rate,
        p.rate_tol,
        "slope vs hbar^2 lambda m / (4 m0^2 a^2)",
    ));
    r.checks.push(Check::at_most(
        "linear_in_lambda",
        lin,
        p.linearity_tol,
        "largest deviation from a straight-line fit",
    ));
    // Width comparison at the shared rate.
    let reference =
        runs[..n].iter().find(|r| r.lambda_model == p.width_lambda_model).map(|r| r.traj.slope()).unwrap_or_else(
            || {
                let lam_si = LatticeConfig::grw(p.n_sites, 1, p.spacing_over_a * GRW_SMEARING, vec![PROTON_MASS])
                    .with_model_lambda(p.width_lambda_model)
                    .lambda;
                k * lam_si + b
            },
        );
    let width_dev = runs[n..].iter().map(|r| (r.traj.slope() / reference - 1.0).abs()).fold(0.0, f64::max);
    r.checks.push(Check::at_most(
        "width_independence",
        width_dev,
        p.width_tol,
        "slope spread across wavepacket widths",
    ));
    r.summary = json!({ "fit_slope_per_lambda": k, "fit_intercept": b, "time_unit_s": runs[0].traj.units.time });
    Ok(r)
}

fn rel_err(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

pub fn cosmo_sweep(p: &CosmoSweepParams) -> Result<Report> {
    let base = CosmoParams { m: p.m, g: p.g, cells: p.cells, lambda: 0.0, total_time: 0.0, n_max: p.n_max };
    base.validate()?;
    let mut times = p.times.clone();
    times.sort_by(f64::total_cmp);
    let runs = p
        .lambdas
        .par_iter()
        .map(|&l| cosmogenesis::mean_n_numerical_at(&base.with_lambda(l), &times))
        .collect::<csl_core::Result<Vec<_>>>()?;
    let mut grid = Vec::new();
    let mut numerical = Vec::new();
    for (&l, run) in p.lambdas.iter().zip(&runs) {
        for (&t, &n) in run.times.iter().zip(&run.n_mean) {
            grid.push(base.with_lambda(l).with_time(t));
            numerical.push(n);
        }
    }
    let mut t = Table::new(&["lambda", "T", "n_analytic", "n_schrodinger", "n_numerical", "rel_err"]);
    let (mut worst_u, mut worst_c): (f64, f64) = (0.0, 0.0);
    let adequate = runs.iter().all(|r| r.truncation_adequate);
    for (c, &n) in grid.iter().zip(&numerical) {
        let exact = cosmogenesis::mean_n_csl(c);
        let rel = rel_err(n, exact);
        if c.lambda == 0.0 {
            worst_u = worst_u.max(rel_err(n, cosmogenesis::mean_n_schrodinger(c)));
        } else {
            worst_c = worst_c.max(rel);
        }
        t.push(vec![
            fmt_num(c.lambda),
            fmt_num(c.total_time),
            fmt_num(exact),
            fmt_num(cosmogenesis::mean_n_schrodinger(c)),
            fmt_num(n),
            fmt_num(rel),
        ]);
    }
    let mut r = Report::default();
    r.table("sweep", t);
    r.checks.push(Check::at_most("unitary_rows", worst_u, p.unitary_tol, "lambda = 0 vs the oscillating closed form"));
    r.checks.push(Check::at_most("collapse_rows", worst_c, p.csl_tol, "lambda > 0 vs the closed form"));
    r.checks.push(Check {
        name: "truncation_adequate".into(),
        passed: adequate,
        value: runs.iter().map(|r| r.max_top_occupancy).fold(0.0, f64::max),
        threshold: cosmogenesis::TRUNCATION_TOL,
        detail: "largest top-level Fock occupancy".into(),
    });
    r.summary = json!({ "runs": grid.len() });
    Ok(r)
}

pub fn zeno_sweep(p: &ZenoSweepParams) -> Result<Report> {
    if p.n_lambda < 2 || !(p.lambda_min > 0.0 && p.lambda_max > p.lambda_min) {
        bail!("need n_lambda >= 2 and 0 < lambda_min < lambda_max");
    }
    let base = CosmoParams { m: p.m, g: p.g, cells: 1, lambda: 0.0, total_time: p.total_time, n_max: p.n_max };
    base.validate()?;
    let ratio = (p.lambda_max / p.lambda_min).ln();
    let grid: Vec<f64> =
        (0..p.n_lambda).map(|i| p.lambda_min * (ratio * i as f64 / (p.n_lambda - 1) as f64).exp()).collect();
    let mut analytic = Table::new(&["lambda", "n_analytic"]);
    let mut increases = 0usize;
    let mut prev: Option<f64> = None;
    for &l in &grid {
        let n = cosmogenesis::mean_n_csl(&base.with_lambda(l));
        analytic.push(vec![fmt_num(l), fmt_num(n)]);
        if l > 10.0 * p.m {
            if prev.is_some_and(|q| n >= q) {
                increases += 1;
            }
            prev = Some(n);
        }
    }
    let mut lambdas = p.numerical_lambdas.clone();
    for l in [p.m, 1000.0 * p.m] {
        if !lambdas.contains(&l) {
            lambdas.push(l);
        }
    }
    let numerical = lambdas
        .par_iter()
        .map(|&l| cosmogenesis::mean_n_numerical(&base.with_lambda(l), 1).map(|t| t.final_n()))
        .collect::<csl_core::Result<Vec<_>>>()?;
    let mut num_t = Table::new(&["lambda", "n_analytic", "n_numerical", "rel_err"]);
    let mut worst: f64 = 0.0;
    for (&l, &n) in lambdas.iter().zip(&numerical) {
        let exact = cosmogenesis::mean_n_csl(&base.with_lambda(l));
        worst = worst.max(rel_err(n, exact));
        num_t.push(vec![fmt_num(l), fmt_num(exact), fmt_num(n), fmt_num(rel_err(n, exact))]);
    }
    let at = |l: f64| numerical[lambdas.iter().position(|&x| x == l).expect("always included")];
    let num_ratio = at(1000.0 * p.m) / at(p.m);
    let ana_ratio =
        cosmogenesis::mean_n_csl(&base.with_lambda(1000.0 * p.m)) / cosmogenesis::mean_n_csl(&base.with_lambda(p.m));
    let mut r = Report::default();
    r.table("zeno_analytic", analytic);
    r.table("zeno_numerical", num_t);
    r.checks.push(Check::at_most("monotone_above_10m", increases as f64, 0.0, "grid points where n does not decrease"));
    r.checks.push(Check::at_most("analytic_suppression", ana_ratio, p.suppression, "n(1000 m) / n(m), closed form"));
    r.checks.push(Check::at_most(
        "numerical_suppression",
        num_ratio,
        p.suppression,
        "n(1000 m) / n(m), master equation",
    ));
    r.checks.push(Check::at_most("numerical_vs_closed_form", worst, 1e-3, "largest relative deviation"));
    r.summary = json!({ "analytic_ratio": ana_ratio, "numerical_ratio": num_ratio });
    Ok(r)
}

pub fn constants_check(p: &ConstantsCheckParams) -> Result<Report> {
    let m = p.mass_ratio * PROTON_MASS;
    let rate = lattice::energy_gain_rate(m, p.lambda, p.a, PROTON_MASS);
    let ratio = lattice::energy_gain_ratio(m, p.lambda, p.a, PROTON_MASS, p.time);
    let mut consts = Table::new(&["name", "value", "unit", "source"]);
    for (name, v, unit, src) in [
        ("hbar", HBAR, "J s", "CODATA 2018"),
        ("proton_mass", PROTON_MASS, "kg", "CODATA 2018"),
        ("speed_of_light", SPEED_OF_LIGHT, "m/s", "SI definition"),
        ("julian_year", JULIAN_YEAR, "s", "IAU"),
        ("lambda", p.lambda, "1/s", "input"),
        ("a", p.a, "m", "input"),
        ("time", p.time, "s", "input"),
    ] {
        consts.push(vec![name.into(), fmt_num(v), unit.into(), src.into()]);
    }
    let mut gain = Table::new(&["quantity", "value"]);
    gain.push(vec!["energy_gain_rate_w".into(), fmt_num(rate)]);
    gain.push(vec!["energy_gained_j".into(), fmt_num(rate * p.time)]);
    gain.push(vec!["rest_energy_j".into(), fmt_num(m * SPEED_OF_LIGHT * SPEED_OF_LIGHT)]);
    gain.push(vec!["ratio".into(), fmt_num(ratio)]);
    gain.push(vec!["time_years".into(), fmt_num(p.time / JULIAN_YEAR)]);
    let mut r = Report::default();
    r.table("constants", consts);
    r.table("energy_gain", gain);
    let off = (ratio / p.expected_ratio).max(p.expected_ratio / ratio);
    r.checks.push(Check::at_most("ratio_order_of_magnitude", off, p.factor, format!("E/mc^2 = {ratio:.3e}")));
    r.summary = json!({ "energy_gain_rate_w": rate, "ratio": ratio });
    Ok(r)
}

fn ledger_checks(r: &mut Report, label: &str, run: &ledger::LedgerRun, tol: f64) {
    r.checks.push(Check::at_most(
        &format!("{label}_conservation"),
        run.max_conservation_error(),
        tol,
        "|E_p + E_w - E(0)| / scale",
    ));
    let e0 = run.records[0].particle_energy;
    let bad =
        run.records.iter().filter(|x| x.particle_energy >= e0 && x.w_density_sum > 1e-12 * e0.abs().max(1.0)).count();
    r.checks.push(Check::at_most(
        &format!("{label}_sign"),
        bad as f64,
        0.0,
        "records with gain >= 0 but positive w-density",
    ));
    let scale = run.records.iter().map(|x| x.particle_energy.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let split = run.records.iter().map(|x| (x.w_density_sum - x.w_field_energy).abs() / scale).fold(0.0, f64::max);
    r.checks.push(Check::at_most(&format!("{label}_density_sum"), split, 1e-10, "sum of site densities vs E_w"));
}

pub fn ledger_demo(p: &LedgerDemoParams) -> Result<Report> {
    let spacing = p.lattice_spacing_over_a * GRW_SMEARING;
    let cfg =
        LatticeConfig::grw(p.lattice_sites, 1, spacing, vec![PROTON_MASS]).with_model_lambda(p.lattice_lambda_model);
    let center = 0.5 * p.lattice_sites as f64 * spacing;
    let problem =
        lattice::lattice_problem(&cfg, &Wavepacket::at_rest(vec![center], p.lattice_width_over_a * GRW_SMEARING))?;
    let steps = (p.lattice_t_final_model / problem.master.max_dt()).ceil() as usize;
    let lat = ledger::run_ledger(&problem.rho0, &problem.master, p.lattice_t_final_model, steps / p.records.max(1))?;

    let cp = CosmoParams {
        m: p.cosmo_m,
        g: p.cosmo_g,
        cells: 1,
        lambda: p.cosmo_lambda,
        total_time: p.cosmo_total_time,
        n_max: p.cosmo_n_max,
    };
    let model = cosmogenesis::cell_model(&cp)?;
    let vac = DensityMatrix::from_state(&QuantumState::basis(cp.fock_dim(), 0)?)?;
    let steps = (cp.total_time / model.max_dt()).ceil() as usize;
    let cosmo = ledger::run_ledger(&vac, &model, cp.total_time, steps / p.records.max(1))?;

    let mut r = Report::default();
    r.table("ledger_lattice", lat.to_table());
    let mut dens = Table::new(&["site", "x_over_a", "w_density"]);
    for (i, w) in lat.final_ledger.w_density.iter().enumerate() {
        dens.push(vec![i.to_string(), fmt_num(i as f64 * p.lattice_spacing_over_a), fmt_num(*w)]);
    }
    r.table("w_density_lattice", dens);
    r.table("ledger_cosmo", cosmo.to_table());
    ledger_checks(&mut r, "lattice", &lat, p.conservation_tol);
    ledger_checks(&mut r, "cosmo", &cosmo, p.conservation_tol);
    let e_w = cosmo.final_ledger.w_field_energy;
    let mass_energy = cp.m * cosmogenesis::mean_n_csl(&cp);
    // Tr(H rho) = m n + 2 g Re<xi>; the interaction part stays bounded.
    let bound = 2.0 * cp.g.abs() * cosmogenesis::xi_fixed_point(&cp).norm() * 1.5 + 1e-3 * mass_energy;
    r.checks.push(Check::at_most("cosmo_w_tracks_mass", (e_w + mass_energy).abs(), bound, "|E_w + m n(T)|"));
    r.summary = json!({
        "lattice": lat.final_ledger,
        "cosmo": cosmo.final_ledger,
        "cosmo_mass_energy": mass_energy,
        "lattice_energy_unit_j": problem.units.energy,
    });
    Ok(r)
}
