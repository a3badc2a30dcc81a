//! Corpus evaluation of S on a planted two-population corpus.
//!
//! Run with `cargo run --release --example analyze_corpus`.

use instab::pipeline::{analyze_corpus, RunConfig};
use instab::synth::{generate, SynthConfig};

fn main() -> instab::Result<()> {
    let corpus = generate(&SynthConfig::two_population(600, 11))?;
    let config = RunConfig::default();
    let out = analyze_corpus(&corpus.traces, &config)?;
    let r = &out.report;

    println!("n = {}, accuracy = {:.3}", r.n, r.accuracy.unwrap_or(f64::NAN));
    println!("AUC_wrong = {:.3} CI {:?}", r.auc_wrong.unwrap_or(f64::NAN), r.auc_ci);
    println!("Spearman  = {:.3}", r.spearman.unwrap_or(f64::NAN));
    println!("bucket  n  accuracy  ci");
    for b in &r.buckets {
        println!("{:>6} {:>3} {:>8.3}  [{:?}, {:?}]", b.bucket, b.n, b.accuracy, b.ci_lo, b.ci_hi);
    }
    println!("bucket slope = {:?}", r.bucket_slope);
    Ok(())
}
