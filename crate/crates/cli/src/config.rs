//! Run configuration: a JSON file, `--set key=value` overrides and the
//! per-experiment defaults, merged with precedence CLI > file > defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::experiments;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    GamblersRuin,
    CollapseEnsemble,
    MasterVsEnsemble,
    OffdiagDecay,
    LatticeEnergy,
    CosmoSweep,
    ZenoSweep,
    ConstantsCheck,
    LedgerDemo,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::GamblersRuin,
        Experiment::CollapseEnsemble,
        Experiment::MasterVsEnsemble,
        Experiment::OffdiagDecay,
        Experiment::LatticeEnergy,
        Experiment::CosmoSweep,
        Experiment::ZenoSweep,
        Experiment::ConstantsCheck,
        Experiment::LedgerDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::GamblersRuin => "gamblers_ruin",
            Experiment::CollapseEnsemble => "collapse_ensemble",
            Experiment::MasterVsEnsemble => "master_vs_ensemble",
            Experiment::OffdiagDecay => "offdiag_decay",
            Experiment::LatticeEnergy => "lattice_energy",
            Experiment::CosmoSweep => "cosmo_sweep",
            Experiment::ZenoSweep => "zeno_sweep",
            Experiment::ConstantsCheck => "constants_check",
            Experiment::LedgerDemo => "ledger_demo",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| anyhow!("unknown experiment `{name}`; run `csl-lab list` for the available ones"))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully resolved configuration, echoed into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parameters: Value,
}

const TOP_LEVEL_KEYS: [&str; 4] = ["experiment", "seed", "output_dir", "parameters"];

/// Splits `key=value`; the value is read as JSON when it parses and as a
/// string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| anyhow!("override `{s}` is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override `{s}` has an empty key");
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}

/// Writes `value` at a dotted `key` inside `root`, creating objects on the
/// way.
fn set_dotted(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = root;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        cur = entry.as_object_mut().ok_or_else(|| anyhow!("`{key}`: `{p}` is not an object"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Recursively overlays `patch` onto `base`, rejecting keys `base` lacks.
fn overlay(base: &mut Value, patch: &Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                if !b.contains_key(k) {
                    let known: Vec<&str> = b.keys().map(String::as_str).collect();
                    bail!("unknown parameter `{child}` (known: {})", known.join(", "));
                }
                overlay(b.get_mut(k).expect("checked above"), v, &child)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

/// Merges defaults, the file contents and the overrides. `seed` and
/// `output_dir` given as flags win over everything else.
pub fn resolve(file: Option<Value>, sets: &[String], seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut raw = match file {
        Some(Value::Object(m)) => m,
        Some(_) => bail!("config file must hold a JSON object"),
        None => Map::new(),
    };
    for s in sets {
        let (k, v) = parse_assignment(s)?;
        set_dotted(&mut raw, &k, v).with_context(|| format!("applying override `{s}`"))?;
    }
    for k in raw.keys() {
        if !TOP_LEVEL_KEYS.contains(&k.as_str()) {
            bail!("unknown config key `{k}` (known: {})", TOP_LEVEL_KEYS.join(", "));
        }
    }
    let experiment = match raw.get("experiment") {
        Some(Value::String(name)) => Experiment::from_name(name)?,
        Some(other) => bail!("`experiment` must be a string, got {other}"),
        None => bail!("config does not name an `experiment`"),
    };
    let mut parameters = experiments::default_parameters(experiment);
    if let Some(p) = raw.get("parameters") {
        if !p.is_object() {
            bail!("`parameters` must be an object");
        }
        overlay(&mut parameters, p, "parameters")?;
    }
    // Type-check now so errors name the offending experiment.
    experiments::validate_parameters(experiment, &parameters)?;
    let seed = match (seed, raw.get("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.as_u64().ok_or_else(|| anyhow!("`seed` must be a non-negative integer, got {v}"))?,
        (None, None) => 0,
    };
    let output_dir = match (out, raw.get("output_dir")) {
        (Some(p), _) => p,
        (None, Some(Value::String(s))) => PathBuf::from(s),
        (None, Some(v)) => bail!("`output_dir` must be a string, got {v}"),
        (None, None) => PathBuf::from("out").join(experiment.name()),
    };
    Ok(RunConfig { experiment, seed, output_dir, parameters })
}

pub fn load_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn precedence() {
        let file = json!({"experiment": "gamblers_ruin", "seed": 4, "parameters": {"n_traj": 100, "n_games": 50}});
        let cfg = resolve(Some(file.clone()), &["parameters.n_traj=7".into()], None, None).unwrap();
        assert_eq!(cfg.parameters["n_traj"], json!(7));
        assert_eq!(cfg.parameters["n_games"], json!(50));
        assert_eq!(cfg.parameters["stake_a"], json!(60));
        assert_eq!(cfg.seed, 4);
        let cfg = resolve(Some(file), &["seed=9".into()], Some(11), Some("x".into())).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.output_dir, PathBuf::from("x"));
    }

    #[test]
    fn rejects_unknown_keys() {
        let e = resolve(Some(json!({"experiment": "gamblers_ruin", "sede": 1})), &[], None, None).unwrap_err();
        assert!(e.to_string().contains("sede"));
        let e = resolve(Some(json!({"experiment": "gamblers_ruin"})), &["parameters.n_trajs=3".into()], None, None)
            .unwrap_err();
        assert!(e.to_string().contains("n_trajs"));
        assert!(resolve(Some(json!({"experiment": "nope"})), &[], None, None).is_err());
        assert!(resolve(None, &[], None, None).is_err());
    }

    #[test]
    fn overrides_alone_are_enough() {
        let cfg = resolve(None, &["experiment=constants_check".into()], None, None).unwrap();
        assert_eq!(cfg.experiment, Experiment::ConstantsCheck);
        assert_eq!(cfg.output_dir, PathBuf::from("out/constants_check"));
    }

    #[test]
    fn type_errors_are_reported() {
        let e = resolve(None, &["experiment=gamblers_ruin".into(), "parameters.n_traj=many".into()], None, None)
            .unwrap_err();
        assert!(format!("{e:#}").contains("gamblers_ruin"));
    }

    #[test]
    fn assignment_values() {
        assert_eq!(parse_assignment("a.b=[1,2]").unwrap(), ("a.b".into(), json!([1, 2])));
        assert_eq!(parse_assignment("a=hello").unwrap(), ("a".into(), json!("hello")));
        assert!(parse_assignment("novalue").is_err());
    }
}
