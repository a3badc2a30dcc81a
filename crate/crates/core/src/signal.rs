//! Per-step observables and per-trace summaries.
//!
//! For step `t` with renormalized distribution `p_t`:
//!
//! - `H_t` is the Shannon entropy of `p_t` in nats,
//! - `D_t` is the Jensen-Shannon divergence between `p_t` and `p_{t-1}` over
//!   the union of their supports (`D_0 = 0`, there is no predecessor),
//! - `I_t = D_t + lambda * H_t`.
//!
//! A trace is summarized by its peak strength `S = max_t I_t`, the early-window
//! maxima `S_w`, the (1-based, smallest-index) peak step and its relative
//! position, and two probes at the peak: the top-2 log-probability margin drop
//! and the turnover of the top-m token set.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::numeric::compensated_sum;
use crate::trace::{align_union, renormalize, StepDistribution, TraceRecord};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_WINDOWS: [usize; 4] = [10, 20, 50, 100];
pub const DEFAULT_PROBE_TOP_M: usize = 10;
/// Fixed early window used for `t*_50` and `rho_50`.
pub const FIXED_WINDOW: usize = 50;

/// Entropy in nats over strictly positive entries.
pub fn entropy(p: &StepDistribution) -> f64 {
    entropy_of(p.probs())
}

/// Entropy of a raw probability slice (zeros are skipped).
pub fn entropy_of(p: &[f64]) -> f64 {
    let h = -compensated_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()));
    let support = p.iter().filter(|&&x| x > 0.0).count().max(1);
    h.clamp(0.0, (support as f64).ln())
}

/// Entropy with `epsilon` added inside the logarithm.
pub fn entropy_eps(p: &StepDistribution, epsilon: f64) -> f64 {
    let h = -compensated_sum(p.probs().iter().map(|&x| x * (x + epsilon).ln()));
    h.max(0.0)
}

/// Jensen-Shannon divergence in nats, aligned on the union support.
pub fn jsd(p: &StepDistribution, q: &StepDistribution) -> f64 {
    let a = align_union(p, q);
    jsd_aligned(&a.p, &a.q)
}

/// Jensen-Shannon divergence of two vectors already on a common support.
///
/// KL terms are summed only where the numerator probability is positive; the
/// mixture is positive wherever either input is.
pub fn jsd_aligned(p: &[f64], q: &[f64]) -> f64 {
    jsd_aligned_eps(p, q, 0.0)
}

fn jsd_aligned_eps(p: &[f64], q: &[f64], epsilon: f64) -> f64 {
    assert_eq!(p.len(), q.len(), "aligned vectors differ in length");
    let kl = |a: &[f64], b: &[f64]| {
        compensated_sum(a.iter().zip(b).filter(|(&x, _)| x > 0.0).map(|(&x, &y)| {
            let m = 0.5 * (x + y);
            if epsilon == 0.0 {
                x * (x / m).ln()
            } else {
                x * ((x + epsilon).ln() - (m + epsilon).ln())
            }
        }))
    };
    (0.5 * kl(p, q) + 0.5 * kl(q, p)).clamp(0.0, LN_2)
}

/// JSD with `epsilon` added inside each logarithm.
pub fn jsd_eps(p: &StepDistribution, q: &StepDistribution, epsilon: f64) -> f64 {
    let a = align_union(p, q);
    jsd_aligned_eps(&a.p, &a.q, epsilon)
}

/// Smallest non-null eigenvalue of the softmax Jacobian `diag(p) - p p^T`.
///
/// Returns 0 for a single-token support.
pub fn curvature_proxy(p: &StepDistribution) -> f64 {
    softmax_jacobian_min_eigenvalue(p.probs())
}

/// Smallest eigenvalue of `diag(p) - p p^T` restricted to the subspace
/// orthogonal to the all-ones vector.
///
/// `J` is a rank-one downdate of a diagonal matrix, so its eigenvalues
/// interlace the sorted probabilities: with `a <= b` the two smallest entries
/// of `p`, the wanted eigenvalue lies in `[a, b]`. When `a < b` it is the root
/// there of the secular function `g(mu) = sum_i p_i / (p_i - mu)`, which is
/// strictly increasing on `(a, b)`. A repeated smallest entry (or a zero
/// entry) makes `a` itself the eigenvalue.
pub fn softmax_jacobian_min_eigenvalue(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    let (mut a, mut b) = (f64::INFINITY, f64::INFINITY);
    for &x in p {
        if x < a {
            b = a;
            a = x;
        } else if x < b {
            b = x;
        }
    }
    if a <= 0.0 {
        return 0.0;
    }
    if a == b {
        return a;
    }
    // Solve in the shifted variable delta = mu - a, in (0, b - a).
    let gaps: Vec<f64> = p.iter().map(|&x| x - a).collect();
    let width = b - a;
    let secular = |delta: f64| -> (f64, f64) {
        let mut g = 0.0;
        let mut dg = 0.0;
        for (&x, &gap) in p.iter().zip(&gaps) {
            let r = 1.0 / (gap - delta);
            g += x * r;
            dg += x * r * r;
        }
        (g, dg)
    };
    let (mut lo, mut hi) = (0.0f64, width);
    let mut delta = 0.5 * width;
    for _ in 0..200 {
        let (g, dg) = secular(delta);
        if g == 0.0 {
            break;
        }
        if g < 0.0 {
            lo = delta;
        } else {
            hi = delta;
        }
        let newton = delta - g / dg;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let tol = 4.0 * f64::EPSILON * (a + next);
        if (next - delta).abs() <= tol || hi - lo <= tol {
            delta = next;
            break;
        }
        delta = next;
    }
    (a + delta).max(0.0)
}

/// Options for [`step_series`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub lambda: f64,
    /// Prefix length of each logged list to keep; `None` keeps everything logged.
    pub effective_k: Option<usize>,
    pub with_kappa: bool,
    /// Added inside logarithms when positive.
    pub epsilon: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            effective_k: None,
            with_kappa: false,
            epsilon: 0.0,
        }
    }
}

/// Per-step `H`, `D`, `I` (and optionally `kappa`) for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSeries {
    #[serde(rename = "H")]
    pub entropy: Vec<f64>,
    #[serde(rename = "D")]
    pub divergence: Vec<f64>,
    #[serde(rename = "I")]
    pub instability: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa: Option<Vec<f64>>,
    pub lambda: f64,
    #[serde(skip)]
    pub effective_k: Option<usize>,
    /// Set once `I` has been permuted independently of `H` and `D`; only
    /// `I`-derived statistics remain meaningful.
    #[serde(default)]
    pub stale_components: bool,
}

impl StepSeries {
    pub fn len(&self) -> usize {
        self.instability.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instability.is_empty()
    }

    /// Same observables, recombined with another `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> StepSeries {
        let mut out = self.clone();
        out.instability = combine(&self.divergence, &self.entropy, lambda);
        out.lambda = lambda;
        out
    }
}

fn combine(divergence: &[f64], entropy: &[f64], lambda: f64) -> Vec<f64> {
    divergence
        .iter()
        .zip(entropy)
        .map(|(d, h)| d + lambda * h)
        .collect()
}

/// Renormalized distributions of every step.
pub fn step_distributions(trace: &TraceRecord, effective_k: Option<usize>) -> Vec<StepDistribution> {
    trace
        .steps
        .iter()
        .map(|s| {
            renormalize(s, effective_k.unwrap_or(s.len()).max(1))
                .expect("validated steps renormalize")
        })
        .collect()
}

pub fn step_series(trace: &TraceRecord, config: &SeriesConfig) -> StepSeries {
    let dists = step_distributions(trace, config.effective_k);
    series_from_distributions(&dists, config)
}

pub fn series_from_distributions(dists: &[StepDistribution], config: &SeriesConfig) -> StepSeries {
    let eps = config.epsilon;
    let entropy: Vec<f64> = dists
        .iter()
        .map(|p| if eps > 0.0 { entropy_eps(p, eps) } else { entropy(p) })
        .collect();
    let mut divergence = Vec::with_capacity(dists.len());
    if !dists.is_empty() {
        divergence.push(0.0);
    }
    for w in dists.windows(2) {
        divergence.push(if eps > 0.0 {
            jsd_eps(&w[1], &w[0], eps)
        } else {
            jsd(&w[1], &w[0])
        });
    }
    let kappa = config
        .with_kappa
        .then(|| dists.iter().map(curvature_proxy).collect());
    StepSeries {
        instability: combine(&divergence, &entropy, config.lambda),
        entropy,
        divergence,
        kappa,
        lambda: config.lambda,
        effective_k: config.effective_k,
        stale_components: false,
    }
}

/// First index of the maximum over `values[..limit]` (smallest-index tie-break).
pub fn argmax_prefix(values: &[f64], limit: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().take(limit).enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// `max_{t <= w} values[t]` (1-based `t`), over the whole series when `w >= len`.
pub fn window_max(values: &[f64], w: usize) -> f64 {
    argmax_prefix(values, w.max(1)).map_or(0.0, |(_, v)| v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub windows: Vec<usize>,
    pub probe_top_m: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            windows: DEFAULT_WINDOWS.to_vec(),
            probe_top_m: DEFAULT_PROBE_TOP_M,
        }
    }
}

/// Per-trace diagnostics. Key names follow the reporting notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDiagnostics {
    pub id: String,
    pub correct: bool,
    #[serde(rename = "T")]
    pub len: usize,
    #[serde(rename = "S")]
    pub strength: f64,
    #[serde(rename = "S_w")]
    pub window_strength: BTreeMap<usize, f64>,
    pub t_star: usize,
    pub rho: f64,
    pub t_star_50: usize,
    pub rho_50: f64,
    /// Top-2 log-probability gap at the peak; `None` for a one-token support.
    pub margin_at_peak: Option<f64>,
    pub margin_drop: Option<f64>,
    pub jaccard_overlap: f64,
    pub turnover: f64,
    /// Peak at the first step: margin drop and overlap carry neutral values.
    pub peak_at_first_step: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub series: Option<StepSeries>,
}

impl TraceDiagnostics {
    /// `S_w`, computed from the stored windows.
    pub fn window(&self, w: usize) -> Option<f64> {
        self.window_strength.get(&w).copied()
    }
}

fn top2_margin(p: &StepDistribution) -> Option<f64> {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &x in p.probs() {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    (second > 0.0).then(|| first.ln() - second.ln())
}

pub fn summarize(trace: &TraceRecord, series: &StepSeries, config: &SummaryConfig) -> TraceDiagnostics {
    let i = &series.instability;
    let len = i.len();
    assert!(len >= 1 && len == trace.len(), "series does not match trace");
    let (peak, strength) = argmax_prefix(i, len).expect("non-empty series");
    let (peak_50, _) = argmax_prefix(i, FIXED_WINDOW).expect("non-empty series");
    let window_strength = config
        .windows
        .iter()
        .map(|&w| (w, window_max(i, w)))
        .collect();

    let k_for = |t: usize| series.effective_k.unwrap_or(trace.steps[t].len()).max(1);
    let margin = |t: usize| {
        renormalize(&trace.steps[t], k_for(t))
            .ok()
            .and_then(|p| top2_margin(&p))
    };
    let margin_at_peak = margin(peak);
    let (margin_drop, jaccard_overlap) = if peak == 0 {
        (margin_at_peak.map(|_| 0.0), 1.0)
    } else {
        let drop = match (margin(peak - 1), margin_at_peak) {
            (Some(before), Some(at)) => Some(before - at),
            _ => None,
        };
        let m = config.probe_top_m;
        let now: HashSet<_> = trace.steps[peak].top_tokens(m).collect();
        let prev: HashSet<_> = trace.steps[peak - 1].top_tokens(m).collect();
        let union = now.union(&prev).count();
        let inter = now.intersection(&prev).count();
        (drop, if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    };

    TraceDiagnostics {
        id: trace.id.clone(),
        correct: trace.correct(),
        len,
        strength,
        window_strength,
        t_star: peak + 1,
        rho: (peak + 1) as f64 / len as f64,
        t_star_50: peak_50 + 1,
        rho_50: (peak_50 + 1) as f64 / FIXED_WINDOW as f64,
        margin_at_peak,
        margin_drop,
        jaccard_overlap,
        turnover: 1.0 - jaccard_overlap,
        peak_at_first_step: peak == 0,
        series: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Decoding, Label, StepRecord, TokenEntry};

    fn dist(support: &[u64], probs: &[f64]) -> StepDistribution {
        StepDistribution::new(support.to_vec(), probs.to_vec()).unwrap()
    }

    fn trace_of(steps: Vec<Vec<(u64, f64)>>) -> TraceRecord {
        TraceRecord {
            id: "t".into(),
            dataset: "d".into(),
            model: "m".into(),
            decoding: Decoding::default(),
            steps: steps
                .into_iter()
                .map(|s| StepRecord::new(s.into_iter().map(|(t, p)| TokenEntry::new(t, p.ln())).collect()))
                .collect(),
            label: Label {
                correct: true,
                predicted: "1".into(),
                reference: "1".into(),
            },
            output_text: None,
        }
    }

    fn series_with_i(i: Vec<f64>) -> StepSeries {
        StepSeries {
            entropy: vec![0.0; i.len()],
            divergence: vec![0.0; i.len()],
            instability: i,
            kappa: None,
            lambda: 1.0,
            effective_k: None,
            stale_components: false,
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&dist(&[1], &[1.0])), 0.0);
        let u: Vec<u64> = (0..50).collect();
        let h = entropy(&dist(&u, &[0.02; 50]));
        assert!((h - 50f64.ln()).abs() < 1e-12);
        let h = entropy(&dist(&[1, 2], &[0.75, 0.25]));
        assert!((h - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn jsd_examples() {
        let p = dist(&[1, 2], &[0.5, 0.5]);
        assert_eq!(jsd(&p, &p), 0.0);
        assert!((jsd(&dist(&[1], &[1.0]), &dist(&[2], &[1.0])) - LN_2).abs() < 1e-15);
        let v = jsd(&p, &dist(&[1], &[1.0]));
        assert!((v - 0.2157).abs() < 1e-4, "{v}");
    }

    #[test]
    fn curvature_examples() {
        assert!((curvature_proxy(&dist(&[1, 2], &[0.5, 0.5])) - 0.5).abs() < 1e-15);
        assert!(curvature_proxy(&dist(&[1, 2], &[1.0 - 1e-9, 1e-9])) < 1e-6);
        for m in [3usize, 7, 50] {
            let s: Vec<u64> = (0..m as u64).collect();
            let k = curvature_proxy(&dist(&s, &vec![1.0 / m as f64; m]));
            assert!((k - 1.0 / m as f64).abs() < 1e-15);
        }
        assert_eq!(curvature_proxy(&dist(&[1], &[1.0])), 0.0);
        // Two-point closed form: the nonzero eigenvalue is 2 p1 p2.
        let k = curvature_proxy(&dist(&[1, 2], &[0.01, 0.99]));
        assert!((k - 2.0 * 0.01 * 0.99).abs() < 1e-15);
    }

    #[test]
    fn single_step_series() {
        let t = trace_of(vec![vec![(1, 0.5), (2, 0.5)]]);
        let s = step_series(&t, &SeriesConfig { lambda: 0.7, ..Default::default() });
        assert_eq!(s.divergence, [0.0]);
        assert_eq!(s.instability, [0.7 * LN_2]);
    }

    #[test]
    fn repeated_steps_have_zero_divergence() {
        let step = vec![(1, 0.6), (2, 0.3), (3, 0.1)];
        let t = trace_of(vec![step.clone(), step.clone(), step]);
        let s = step_series(&t, &SeriesConfig::default());
        assert!(s.divergence.iter().all(|&d| d == 0.0));
        assert_eq!(s.instability, s.entropy);
    }

    #[test]
    fn three_step_series_matches_hand_computation() {
        let t = trace_of(vec![
            vec![(1, 0.5), (2, 0.5)],
            vec![(1, 1.0)],
            vec![(3, 0.75), (1, 0.25)],
        ]);
        let s = step_series(&t, &SeriesConfig { with_kappa: true, ..Default::default() });
        let h = |p: &[f64]| -p.iter().map(|x| x * x.ln()).sum::<f64>();
        let kl = |p: &[f64], q: &[f64]| {
            p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum::<f64>()
        };
        let js = |p: &[f64], q: &[f64]| {
            let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            0.5 * kl(p, &m) + 0.5 * kl(q, &m)
        };
        // tokens ordered [1, 2, 3]
        let d1 = js(&[1.0, 0.0, 0.0], &[0.5, 0.5, 0.0]);
        let d2 = js(&[0.25, 0.0, 0.75], &[1.0, 0.0, 0.0]);
        let expected_h = [h(&[0.5, 0.5]), 0.0, h(&[0.75, 0.25])];
        let expected_d = [0.0, d1, d2];
        for t in 0..3 {
            assert!((s.entropy[t] - expected_h[t]).abs() < 1e-12);
            assert!((s.divergence[t] - expected_d[t]).abs() < 1e-12);
            assert!((s.instability[t] - expected_h[t] - expected_d[t]).abs() < 1e-12);
        }
        let kappa = s.kappa.unwrap();
        assert!((kappa[0] - 0.5).abs() < 1e-15);
        assert_eq!(kappa[1], 0.0);
        assert!((kappa[2] - 2.0 * 0.75 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_series_peaks_at_first_step() {
        let t = trace_of(vec![vec![(1, 0.5), (2, 0.5)]; 4]);
        let d = summarize(&t, &series_with_i(vec![0.3; 4]), &SummaryConfig::default());
        assert_eq!(d.t_star, 1);
        assert_eq!(d.rho, 0.25);
        assert!(d.peak_at_first_step);
        assert_eq!(d.jaccard_overlap, 1.0);
        assert_eq!(d.margin_drop, Some(0.0));
    }

    #[test]
    fn peak_statistics_on_small_series() {
        let t = trace_of(vec![vec![(1, 0.5), (2, 0.5)]; 3]);
        let d = summarize(&t, &series_with_i(vec![0.1, 0.9, 0.2]), &SummaryConfig::default());
        assert_eq!(d.strength, 0.9);
        assert_eq!(d.t_star, 2);
        assert!((d.rho - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.window(10), Some(0.9));
        assert_eq!(d.t_star_50, 2);
        assert_eq!(d.rho_50, 2.0 / 50.0);
    }

    #[test]
    fn identical_top_sets_have_full_overlap() {
        let step: Vec<(u64, f64)> = (0..12).map(|i| (i, 1.0 / 12.0)).collect();
        let t = trace_of(vec![step.clone(), step]);
        let d = summarize(&t, &series_with_i(vec![0.0, 1.0]), &SummaryConfig::default());
        assert_eq!(d.jaccard_overlap, 1.0);
        assert_eq!(d.turnover, 0.0);
    }

    #[test]
    fn margin_drop_and_turnover_at_peak() {
        let t = trace_of(vec![
            vec![(1, 0.8), (2, 0.1), (3, 0.1)],
            vec![(1, 0.4), (4, 0.4), (5, 0.2)],
        ]);
        let d = summarize(&t, &series_with_i(vec![0.0, 1.0]), &SummaryConfig::default());
        assert_eq!(d.margin_at_peak, Some(0.0));
        assert!((d.margin_drop.unwrap() - (8.0f64).ln()).abs() < 1e-12);
        assert!((d.jaccard_overlap - 0.2).abs() < 1e-15);
        assert!((d.turnover - 0.8).abs() < 1e-15);
    }

    #[test]
    fn window_max_clamps_to_series() {
        let v = [0.1, 0.5, 0.2];
        assert_eq!(window_max(&v, 1), 0.1);
        assert_eq!(window_max(&v, 100), 0.5);
    }
}
