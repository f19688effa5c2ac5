//! The full acceptance suite. Runs without the libtest harness so the ten
//! result lines are always printed; exits non-zero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;

use csl_lab::acceptance::run_all;

const NAME: &str = "acceptance_criteria";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("{NAME}: test");
        return ExitCode::SUCCESS;
    }
    // Honour a name filter the way libtest would, ignoring flags.
    if args.iter().filter(|a| !a.starts_with('-')).any(|f| !NAME.contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let results = run_all(Path::new(env!("CARGO_BIN_EXE_csl-lab")));
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if results.len() == 10 && failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
