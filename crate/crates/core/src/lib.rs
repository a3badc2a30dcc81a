//! Inference-time instability diagnostics for autoregressive decoding traces.
//!
//! Each decoding step is observed only through its logged top-k token log
//! probabilities. From the renormalized step distributions this crate derives
//! per-step entropy `H_t`, consecutive-step Jensen-Shannon divergence `D_t`
//! and the instability signal `I_t = D_t + lambda * H_t`, summarizes traces by
//! their peak strength and peak timing, and evaluates how well those summaries
//! separate correct from wrong generations.
//!
//! Module map:
//!
//! - [`trace`]: JSONL trace format, validation, renormalization, union-support alignment
//! - [`signal`]: entropy, JSD, curvature proxy, per-step series and per-trace diagnostics
//! - [`metrics`]: AUC for wrongness, Spearman, quantile buckets, percentile bootstrap
//! - [`controls`]: shuffles, entropy-family baselines, lambda / top-k / window sweeps
//! - [`timing`]: peak-position classes, threshold sweeps, rho bins, failure modes
//! - [`synth`]: planted-structure synthetic corpora and brute-force [`synth::oracle`]s
//! - [`theory`]: randomized certification of the divergence lower bounds
//! - [`pipeline`]: run configuration and the file-producing analysis commands
//!
//! ```
//! use instab::trace::{StepRecord, TokenEntry};
//! use instab::signal::{entropy, jsd};
//! use instab::trace::renormalize;
//!
//! let a = StepRecord::new(vec![TokenEntry::new(1, 0.6f64.ln()), TokenEntry::new(2, 0.2f64.ln())]);
//! let b = StepRecord::new(vec![TokenEntry::new(2, 0.5f64.ln()), TokenEntry::new(3, 0.5f64.ln())]);
//! let p = renormalize(&a, 50).unwrap();
//! let q = renormalize(&b, 50).unwrap();
//! assert!((p.probs()[0] - 0.75).abs() < 1e-12);
//! assert!(entropy(&p) > 0.0);
//! assert!(jsd(&p, &q) <= std::f64::consts::LN_2);
//! ```

pub mod controls;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod signal;
pub mod synth;
pub mod theory;
pub mod timing;
pub mod trace;

pub use error::{Error, Result};
