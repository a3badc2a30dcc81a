//! Instability series for a hand-built three-step trace.
//!
//! Run with `cargo run --example quickstart_signal`.

use instab::signal::{step_series, summarize, SeriesConfig, SummaryConfig};
use instab::trace::{Decoding, Label, StepRecord, TokenEntry, TraceRecord};

fn step(entries: &[(u64, f64)]) -> StepRecord {
    StepRecord::new(entries.iter().map(|&(t, p)| TokenEntry::new(t, p.ln())).collect())
}

fn main() {
    let trace = TraceRecord {
        id: "demo-1".into(),
        dataset: "hand".into(),
        model: "toy".into(),
        decoding: Decoding::default(),
        steps: vec![
            step(&[(7, 0.90), (3, 0.05)]),
            step(&[(7, 0.40), (3, 0.35), (9, 0.20)]),
            step(&[(9, 0.85), (7, 0.10)]),
        ],
        label: Label {
            correct: false,
            predicted: "42".into(),
            reference: "41".into(),
        },
        output_text: Some("The answer is 42".into()),
    };

    let series = step_series(&trace, &SeriesConfig { with_kappa: true, ..Default::default() });
    println!(" t      H_t      D_t      I_t    kappa");
    for t in 0..series.len() {
        println!(
            "{:>2} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            t + 1,
            series.entropy[t],
            series.divergence[t],
            series.instability[t],
            series.kappa.as_ref().map_or(f64::NAN, |k| k[t])
        );
    }

    let d = summarize(&trace, &series, &SummaryConfig::default());
    println!("S = {:.4} at t* = {} (rho = {:.3})", d.strength, d.t_star, d.rho);
    println!("margin drop {:?}, top-10 turnover {:.2}", d.margin_drop, d.turnover);
}
