//! Early, middle and late peaks on a corpus with timing-dependent accuracy.
//!
//! Run with `cargo run --release --example peak_timing`.

use instab::pipeline::{analyze_corpus, RunConfig};
use instab::synth::{generate, SynthConfig};
use instab::timing::{timing_report, DEFAULT_EARLY, DEFAULT_LATE, DEFAULT_RHO_BINS};

fn main() -> instab::Result<()> {
    let corpus = generate(&SynthConfig::timing_ordered(600, 4))?.traces;
    let mut config = RunConfig::default();
    config.bootstrap.resamples = 0;
    let diags = analyze_corpus(&corpus, &config)?.diagnostics;
    let report = timing_report(&diags, DEFAULT_EARLY, DEFAULT_LATE, DEFAULT_RHO_BINS)?;

    for c in [&report.rho, &report.rho_50] {
        println!("{:?}", c.scheme);
        for row in &c.class_table {
            println!("  {:<7} n={:<4} accuracy {:.3}", row.class, row.n, row.accuracy.unwrap_or(f64::NAN));
        }
    }
    for s in &report.sweep {
        println!("early < {:.2}, late > {:.2}: gap {:+.3}", s.early_thresh, s.late_thresh, s.gap.unwrap_or(f64::NAN));
    }
    Ok(())
}
