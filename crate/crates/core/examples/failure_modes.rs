//! Taxonomy of wrong traces: stable, early collapse, unstable.
//!
//! Run with `cargo run --release --example failure_modes`.

use instab::pipeline::{analyze_corpus, RunConfig};
use instab::synth::{generate, SynthConfig};
use instab::timing::{failure_modes, FailureMode};

fn main() -> instab::Result<()> {
    let corpus = generate(&SynthConfig::failure_modes(500, 8))?;
    let mut config = RunConfig::default();
    config.bootstrap.resamples = 0;
    let diags = analyze_corpus(&corpus.traces, &config)?.diagnostics;
    let modes = failure_modes(&diags)?;
    println!(
        "stable_wrong {}  early_collapse {}  unstable_wrong {}",
        modes.stable_wrong, modes.early_collapse, modes.unstable_wrong
    );

    let planted: std::collections::HashMap<_, _> =
        corpus.provenance.iter().map(|p| (p.id.as_str(), p.population)).collect();
    // Preset populations in order: stable, early collapse, unstable.
    let expected = [FailureMode::StableWrong, FailureMode::EarlyCollapse, FailureMode::UnstableWrong];
    let agree = modes
        .assignments
        .iter()
        .filter(|(id, mode)| expected[planted[id.as_str()]] == *mode)
        .count();
    println!("{agree} of {} assignments match the planted population", modes.assignments.len());
    Ok(())
}
