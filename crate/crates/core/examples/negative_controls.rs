//! Shuffle controls and entropy-family baselines.
//!
//! Run with `cargo run --release --example negative_controls`.

use instab::controls::{run_control, AnalysisOptions, ControlKind, ControlSpec};
use instab::metrics::EvalOptions;
use instab::synth::{generate, SynthConfig};

fn main() -> instab::Result<()> {
    let corpus = generate(&SynthConfig::two_population(400, 5))?.traces;
    let options = AnalysisOptions {
        eval: EvalOptions { bootstrap: None, ..Default::default() },
        ..Default::default()
    };
    for kind in [
        ControlKind::ShuffleSeries,
        ControlKind::ShuffleSteps,
        ControlKind::BaselineEntropy,
        ControlKind::BaselineEntropyChange,
        ControlKind::BaselineDivergence,
    ] {
        for row in run_control(&corpus, &ControlSpec::with_defaults(kind), &options)? {
            println!(
                "{:<12} {:<10} {:<5} AUC {:.3}  Spearman {:+.3}",
                row.control,
                row.setting,
                row.statistic,
                row.auc_wrong.unwrap_or(f64::NAN),
                row.spearman.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
