//! Full inference pipeline on the shipped 2D drawdown preset: prior
//! generation, ensemble history simulation, coverage gate, automatic
//! threshold search, envelopes, and prediction on the union of selected
//! subsets. Artifacts land in a temp directory.

use std::path::Path;

use neiflow::harness::{config::CaseConfig, run_case, RunOpts, Stage};

fn main() -> neiflow::Result<()> {
    let preset = concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/case1.toml");
    let config = CaseConfig::load(Path::new(preset))?;

    let out = std::env::temp_dir().join("neiflow_history_match_nei");
    let outcome = run_case(&config, Stage::Nei, &RunOpts::new(&out))?;

    let s = outcome.summary;
    let nei = s.nei.expect("inference stage filled the summary");
    println!(
        "{}: {} priors, {} history steps, {} observed well(s)",
        s.case, s.n_realizations, s.history_steps, s.observed_blocks
    );
    println!(
        "prior coverage {:.4} (gate {:.2})",
        nei.prior_coverage, nei.coverage_target
    );
    println!(
        "threshold search picked sigma = {:.4}; {} of {} subsets selected",
        nei.sigma, nei.n_selected, nei.subsets_evaluated
    );
    println!(
        "posterior coverage {:.4}; union of {} realizations simulated {} further steps",
        nei.posterior_coverage, nei.union_size, s.prediction_steps
    );
    println!(
        "forward runs: {} history + {} prediction = {}",
        s.forward_runs_history, nei.forward_runs_prediction, nei.forward_runs_total
    );
    println!("artifacts in {}", outcome.out_dir.display());
    Ok(())
}
