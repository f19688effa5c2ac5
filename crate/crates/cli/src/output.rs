//! Writing reports: atomic file writes, CSV and plot-data variants, and the
//! run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::experiments::{Check, Report};

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub seed: u64,
    pub config: &'a RunConfig,
    pub files: Vec<String>,
    pub wall_time_s: f64,
    pub passed: bool,
    pub checks: &'a [Check],
    pub summary: &'a Value,
}

/// Writes every table (plus whitespace variants when `plot_data` is set),
/// `summary.json` and `manifest.json`. Returns the manifest path.
pub fn write_report(cfg: &RunConfig, report: &Report, plot_data: bool, wall_time: Duration) -> Result<PathBuf> {
    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    for out in &report.outputs {
        let name = format!("{}.csv", out.name);
        write_atomic(&dir.join(&name), out.table.to_csv_string()?.as_bytes())?;
        files.push(name);
        if plot_data {
            let mut buf = Vec::new();
            out.table.write_whitespace(&mut buf)?;
            let name = format!("{}.dat", out.name);
            write_atomic(&dir.join(&name), &buf)?;
            files.push(name);
        }
    }
    let summary = serde_json::to_string_pretty(&report.summary)? + "\n";
    write_atomic(&dir.join("summary.json"), summary.as_bytes())?;
    files.push("summary.json".into());
    let manifest = Manifest {
        tool: "csl-lab",
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.to_string(),
        seed: cfg.seed,
        config: cfg,
        files,
        wall_time_s: wall_time.as_secs_f64(),
        passed: report.passed(),
        checks: &report.checks,
        summary: &report.summary,
    };
    let path = dir.join("manifest.json");
    write_atomic(&path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
    Ok(path)
}
