//! The acceptance suite behind `csl-lab check`: ten criteria, each reported
//! as one pass/fail line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use serde_json::json;

use csl_core::cosmogenesis::{mean_n_csl, mean_n_schrodinger, moment_ode_oracle, CosmoParams};
use csl_core::QuantumGame;

use crate::experiments::{self, Check, Report};

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:>2} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Outcome of one criterion body: pass flag and a one-line detail.
type Outcome = Result<(bool, String)>;

fn criterion(id: u32, name: &'static str, body: impl FnOnce() -> Outcome) -> CriterionResult {
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e:#}")),
    };
    CriterionResult { id, name, passed, detail, elapsed: start.elapsed() }
}

fn from_checks(report: &Report, names: &[&str]) -> Outcome {
    let picked: Vec<&Check> = report.checks.iter().filter(|c| names.contains(&c.name.as_str())).collect();
    if picked.len() != names.len() {
        bail!("expected checks {names:?}, found {}", picked.len());
    }
    let detail = picked.iter().map(|c| format!("{}={:.3e}<={:.1e}", c.name, c.value, c.threshold)).collect::<Vec<_>>();
    Ok((picked.iter().all(|c| c.passed), detail.join(", ")))
}

pub fn born_rule() -> Outcome {
    let start = Instant::now();
    let ens = QuantumGame::new(60.0, 40.0).run(10_000, 20_240_601)?;
    let f = ens.outcome_frequencies[0];
    let secs = start.elapsed().as_secs_f64();
    Ok(((f - 0.6).abs() < 0.015 && secs < 30.0, format!("frequency {f:.4} (target 0.6 +- 0.015), {secs:.1} s")))
}

pub fn offdiag_decay() -> Outcome {
    let r = experiments::offdiag_decay(&Default::default(), 7)?;
    from_checks(&r, &["ensemble_z", "master_rel_err"])
}

pub fn unraveling() -> Outcome {
    let r = experiments::master_vs_ensemble(&Default::default(), 11)?;
    from_checks(&r, &["max_entry_z"])
}

pub fn cosmo_analytic() -> Outcome {
    let base = CosmoParams { m: 1.0, g: 0.1, cells: 4, lambda: 0.0, total_time: 0.0, n_max: 16 };
    let lambdas = [0.01, 0.1, 0.5, 2.0, 10.0];
    let times = [0.5, 2.0, 5.0, 10.0, 20.0];
    let mut worst: f64 = 0.0;
    let mut worst_limit: f64 = 0.0;
    for &t in &times {
        for &l in &lambdas {
            let p = base.with_lambda(l).with_time(t);
            let oracle = moment_ode_oracle(&p, 1)?.final_n();
            let exact = mean_n_csl(&p);
            worst = worst.max((oracle - exact).abs() / exact.abs());
        }
        let p = base.with_time(t);
        let schrodinger = mean_n_schrodinger(&p);
        for l in [0.0, 1e-14] {
            worst_limit = worst_limit.max((mean_n_csl(&p.with_lambda(l)) - schrodinger).abs() / schrodinger);
        }
    }
    Ok((
        worst <= 1e-8 && worst_limit <= 1e-10,
        format!("moment oracle rel {worst:.2e}, zero-rate limit rel {worst_limit:.2e}"),
    ))
}

pub fn cosmo_numerical() -> Outcome {
    let start = Instant::now();
    let p = experiments::CosmoSweepParams { lambdas: vec![0.1, 0.5, 2.0], ..Default::default() };
    let r = experiments::cosmo_sweep(&p)?;
    let (ok, detail) = from_checks(&r, &["collapse_rows", "truncation_adequate"])?;
    let secs = start.elapsed().as_secs_f64();
    Ok((ok && secs < 60.0, format!("{detail}, {secs:.1} s")))
}

pub fn zeno() -> Outcome {
    let r = experiments::zeno_sweep(&Default::default())?;
    from_checks(&r, &["monotone_above_10m", "analytic_suppression", "numerical_suppression"])
}

pub fn constants() -> Outcome {
    let r = experiments::constants_check(&Default::default())?;
    let ratio = r.summary["ratio"].as_f64().unwrap_or(f64::NAN);
    let (ok, detail) = from_checks(&r, &["ratio_order_of_magnitude"])?;
    Ok((ok, format!("E/mc^2 = {ratio:.3e}; {detail}")))
}

pub fn lattice_energy() -> Outcome {
    let r = experiments::lattice_energy(&Default::default())?;
    from_checks(&r, &["rate_vs_1d_formula", "linear_in_lambda"])
}

pub fn ledger() -> Outcome {
    let r = experiments::ledger_demo(&Default::default())?;
    from_checks(&r, &["lattice_conservation", "lattice_sign", "cosmo_conservation", "cosmo_sign"])
}

fn scratch_dir(tag: &str) -> PathBuf {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    std::env::temp_dir().join(format!("csl-lab-{tag}-{}-{nanos}", std::process::id()))
}

/// Configs used for the determinism criterion: the stochastic experiments at
/// reduced size.
pub fn determinism_configs() -> Vec<(&'static str, serde_json::Value)> {
    vec![
        (
            "gamblers_ruin",
            json!({"experiment": "gamblers_ruin", "seed": 5, "parameters": {"n_traj": 2000, "n_games": 2000}}),
        ),
        (
            "collapse_ensemble",
            json!({"experiment": "collapse_ensemble", "seed": 6, "parameters": {"n_traj": 1000, "n_steps": 300}}),
        ),
        (
            "master_vs_ensemble",
            json!({"experiment": "master_vs_ensemble", "seed": 7, "parameters": {"n_traj": 1000, "n_steps": 100}}),
        ),
        ("offdiag_decay", json!({"experiment": "offdiag_decay", "seed": 8, "parameters": {"n_traj": 1000}})),
    ]
}

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.push((name, fs::read(&path)?));
        }
    }
    out.sort();
    Ok(out)
}

/// Runs `exe run` on each determinism config with 1, 4 and 16 worker
/// threads and compares the CSV files byte for byte.
pub fn determinism(exe: &Path) -> Outcome {
    let root = scratch_dir("determinism");
    fs::create_dir_all(&root)?;
    let result = (|| -> Outcome {
        let mut compared = 0;
        for (name, cfg) in determinism_configs() {
            let cfg_path = root.join(format!("{name}.json"));
            fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg)?)?;
            let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
            for threads in [1, 4, 16] {
                let out = root.join(format!("{name}-{threads}"));
                let status = Command::new(exe)
                    .arg("--threads")
                    .arg(threads.to_string())
                    .arg("run")
                    .arg(&cfg_path)
                    .arg("--out")
                    .arg(&out)
                    .output()
                    .with_context(|| format!("launching {}", exe.display()))?;
                // Exit code 2 only reports failed built-in checks, which
                // small ensembles may trip; the files are what matter here.
                if !matches!(status.status.code(), Some(0) | Some(2)) {
                    bail!("{name} with {threads} threads failed: {}", String::from_utf8_lossy(&status.stderr));
                }
                let files = csv_files(&out)?;
                if files.is_empty() {
                    bail!("{name} wrote no CSV files");
                }
                match &reference {
                    None => reference = Some(files),
                    Some(r) if *r == files => compared += files.len(),
                    Some(_) => return Ok((false, format!("{name}: output differs at {threads} threads"))),
                }
            }
        }
        Ok((true, format!("{compared} CSV files identical across 1, 4 and 16 threads")))
    })();
    let _ = fs::remove_dir_all(&root);
    result
}

/// Runs all ten criteria; `exe` is the `csl-lab` binary used for the
/// determinism criterion.
pub fn run_all(exe: &Path) -> Vec<CriterionResult> {
    vec![
        criterion(1, "born_rule_statistics", born_rule),
        criterion(2, "offdiagonal_decay", offdiag_decay),
        criterion(3, "unraveling_equivalence", unraveling),
        criterion(4, "cosmogenesis_closed_form", cosmo_analytic),
        criterion(5, "cosmogenesis_master_equation", cosmo_numerical),
        criterion(6, "zeno_limit", zeno),
        criterion(7, "energy_gain_constants", constants),
        criterion(8, "lattice_energy_gain", lattice_energy),
        criterion(9, "ledger_conservation", ledger),
        criterion(10, "determinism", || determinism(exe)),
    ]
}
