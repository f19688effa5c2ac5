use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use csl_lab::config::{self, Experiment};
use csl_lab::{acceptance, experiments, output};

#[derive(Parser)]
#[command(name = "csl-lab", version, about = "Collapse-dynamics experiments")]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        /// JSON config file.
        config: PathBuf,
        /// Override a config value, e.g. `parameters.n_traj=500`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write whitespace-delimited `.dat` files.
        #[arg(long)]
        plot_data: bool,
    },
    /// List experiments and their default parameters.
    List,
    /// Run the built-in acceptance suite.
    Check,
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    match cli.command {
        Command::Run { config, sets, seed, out, plot_data } => {
            let file = config::load_file(&config)?;
            let cfg = config::resolve(Some(file), &sets, seed, out)?;
            let start = Instant::now();
            let report = experiments::run(&cfg)?;
            let manifest = output::write_report(&cfg, &report, plot_data, start.elapsed())?;
            for c in &report.checks {
                println!(
                    "{} {}: {:.6e} (limit {:.6e}) {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold,
                    c.detail
                );
            }
            println!("wrote {}", manifest.display());
            Ok(report.passed())
        }
        Command::List => {
            for e in Experiment::ALL {
                let defaults = serde_json::to_string_pretty(&experiments::default_parameters(e))?;
                println!("{e}\n{defaults}\n");
            }
            Ok(true)
        }
        Command::Check => {
            let exe = std::env::current_exe().context("locating the csl-lab binary")?;
            let results = acceptance::run_all(&exe);
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
