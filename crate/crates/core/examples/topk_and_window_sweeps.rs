//! Effective top-k sweep, early-window sweep and lambda ablation.
//!
//! Run with `cargo run --release --example topk_and_window_sweeps`.

use instab::controls::{lambda_ablation, topk_sweep, window_sweep, AnalysisOptions};
use instab::metrics::EvalOptions;
use instab::synth::{generate, SynthConfig};

fn main() -> instab::Result<()> {
    let options = AnalysisOptions {
        eval: EvalOptions { bootstrap: None, ..Default::default() },
        ..Default::default()
    };
    let planted = generate(&SynthConfig::two_population(400, 2))?.traces;
    for (k, r) in topk_sweep(&planted, &[10, 20, 50], &options)? {
        println!("k = {k:>3}: AUC {:.3}", r.auc_wrong.unwrap_or(f64::NAN));
    }
    for (w, r) in window_sweep(&planted, &[5, 10, 20, 50, 100], &options)? {
        println!("S_{w:<3}: AUC {:.3}", r.auc_wrong.unwrap_or(f64::NAN));
    }

    let saturated = generate(&SynthConfig::saturated_divergence(400, 2))?.traces;
    for (lambda, r) in lambda_ablation(&saturated, &[0.0, 0.5, 1.0], &options)? {
        println!("lambda = {lambda}: AUC {:.3}", r.auc_wrong.unwrap_or(f64::NAN));
    }
    Ok(())
}
