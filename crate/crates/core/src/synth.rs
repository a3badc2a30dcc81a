//! Synthetic trace corpora with planted structure.
//!
//! Distributions are built directly on k-token supports. Every baseline step
//! of a trace uses a geometric rank profile `p_r ~ exp(-beta * r)` tuned to the
//! trace's baseline entropy. A planted peak replaces the top
//! `ceil(support_churn * k)` tokens with fresh ids and flattens the profile
//! until the step's instability `D + H` (with lambda = 1) reaches the target
//! height; the following step returns to baseline. Populations are assigned by
//! exact quota, so planted counts are known. Provenance lives in a sidecar
//! file, never in the trace itself.

use std::f64::consts::LN_2;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{apportion, permutation, stream_rng, uniform, unit_f64};
use crate::signal::{entropy_of, jsd};
use crate::trace::{Decoding, Label, StepDistribution, StepRecord, TokenEntry, TokenId, TraceRecord};

/// First token id handed out to churned-in tokens.
const FRESH_TOKEN_BASE: TokenId = 1_000_000;
const BETA_MAX: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub share: f64,
    pub correct_rate: f64,
    /// Inclusive 1-based step range for the planted peak.
    pub peak_window: [usize; 2],
    /// Target `I` at the peak; no peak is planted at or below the baseline entropy.
    pub peak_height: f64,
    pub baseline_entropy: f64,
    pub support_churn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_traces: usize,
    /// Inclusive trace-length range.
    pub t_range: [usize; 2],
    pub k: usize,
    pub seed: u64,
    pub populations: Vec<Population>,
    /// Relative per-trace noise on baseline entropy and peak height.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Relative per-step noise on baseline entropy.
    #[serde(default)]
    pub step_noise: f64,
    /// Total probability carried by the logged top-k list.
    #[serde(default = "default_logged_mass")]
    pub logged_mass: f64,
}

fn default_jitter() -> f64 {
    0.05
}

fn default_logged_mass() -> f64 {
    0.95
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let [t_min, t_max] = self.t_range;
        if t_min < 1 || t_min > t_max {
            return bad(format!("invalid trace length range {:?}", self.t_range));
        }
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.populations.is_empty() {
            return bad("at least one population is required".into());
        }
        let total: f64 = self.populations.iter().map(|p| p.share).sum();
        if (total - 1.0).abs() > 1e-9 || self.populations.iter().any(|p| p.share < 0.0) {
            return bad(format!("population shares sum to {total}, not 1"));
        }
        if !(self.jitter >= 0.0 && self.jitter < 1.0) || !(self.step_noise >= 0.0 && self.step_noise < 1.0) {
            return bad("jitter and step_noise must lie in [0, 1)".into());
        }
        if !(self.logged_mass > 0.0 && self.logged_mass <= 1.0) {
            return bad("logged_mass must lie in (0, 1]".into());
        }
        let ceiling = LN_2 + (self.k as f64).ln();
        for (i, p) in self.populations.iter().enumerate() {
            let [lo, hi] = p.peak_window;
            if lo < 1 || lo > hi || hi > t_max {
                return bad(format!("population {i}: peak window {:?} outside 1..={t_max}", p.peak_window));
            }
            if !(0.0..=1.0).contains(&p.correct_rate) || !(0.0..=1.0).contains(&p.support_churn) {
                return bad(format!("population {i}: rates must lie in [0, 1]"));
            }
            if !(p.baseline_entropy >= 0.0 && p.baseline_entropy <= (self.k as f64).ln()) {
                return bad(format!("population {i}: baseline entropy outside [0, ln k]"));
            }
            if p.peak_height > ceiling {
                return bad(format!(
                    "population {i}: peak height {} exceeds ln 2 + ln k = {ceiling}",
                    p.peak_height
                ));
            }
        }
        Ok(())
    }

    fn base(n_traces: usize, seed: u64, t_range: [usize; 2], populations: Vec<Population>) -> Self {
        Self {
            n_traces,
            t_range,
            k: 50,
            seed,
            populations,
            jitter: default_jitter(),
            step_noise: 0.0,
            logged_mass: default_logged_mass(),
        }
    }

    /// Correct traces with low peaks, wrong traces with high peaks.
    pub fn two_population(n_traces: usize, seed: u64) -> Self {
        Self::base(
            n_traces,
            seed,
            [40, 128],
            vec![
                Population {
                    share: 0.5,
                    correct_rate: 1.0,
                    peak_window: [5, 35],
                    peak_height: 1.6,
                    baseline_entropy: 0.8,
                    support_churn: 0.3,
                },
                Population {
                    share: 0.5,
                    correct_rate: 0.0,
                    peak_window: [5, 35],
                    peak_height: 3.2,
                    baseline_entropy: 0.8,
                    support_churn: 0.6,
                },
            ],
        )
    }

    /// Correctness independent of every planted feature.
    pub fn null(n_traces: usize, seed: u64) -> Self {
        let mut c = Self::base(
            n_traces,
            seed,
            [40, 128],
            vec![Population {
                share: 1.0,
                correct_rate: 0.5,
                peak_window: [5, 35],
                peak_height: 2.2,
                baseline_entropy: 0.8,
                support_churn: 0.4,
            }],
        );
        c.jitter = 0.1;
        c
    }

    /// Equal peak heights; early peaks mostly correct, late peaks mostly wrong.
    pub fn timing_ordered(n_traces: usize, seed: u64) -> Self {
        let pop = |share, correct_rate, peak_window| Population {
            share,
            correct_rate,
            peak_window,
            peak_height: 2.2,
            baseline_entropy: 0.8,
            support_churn: 0.4,
        };
        Self::base(
            n_traces,
            seed,
            [100, 100],
            vec![
                pop(0.4, 0.9, [5, 18]),
                pop(0.3, 0.5, [30, 44]),
                pop(0.3, 0.1, [62, 95]),
            ],
        )
    }

    /// All wrong: stable low peaks (20%), early collapses (20%), late unstable (60%).
    pub fn failure_modes(n_traces: usize, seed: u64) -> Self {
        let pop = |share, peak_window, peak_height| Population {
            share,
            correct_rate: 0.0,
            peak_window,
            peak_height,
            baseline_entropy: 0.5,
            support_churn: 0.5,
        };
        Self::base(
            n_traces,
            seed,
            [100, 120],
            vec![
                pop(0.2, [30, 60], 1.0),
                pop(0.2, [3, 15], 3.0),
                pop(0.6, [40, 90], 2.3),
            ],
        )
    }

    /// Fully churned peaks (JSD pinned at ln 2); only entropy separates classes.
    pub fn saturated_divergence(n_traces: usize, seed: u64) -> Self {
        let pop = |correct_rate, peak_height| Population {
            share: 0.5,
            correct_rate,
            peak_window: [5, 35],
            peak_height,
            baseline_entropy: 0.8,
            support_churn: 1.0,
        };
        Self::base(
            n_traces,
            seed,
            [40, 128],
            vec![pop(1.0, LN_2 + 1.5), pop(0.0, LN_2 + 3.0)],
        )
    }

    /// Identical distributions at every step, no planted peak.
    pub fn flat(n_traces: usize, seed: u64) -> Self {
        let mut c = Self::base(
            n_traces,
            seed,
            [10, 60],
            vec![Population {
                share: 1.0,
                correct_rate: 0.5,
                peak_window: [1, 10],
                peak_height: 0.0,
                baseline_entropy: 1.0,
                support_churn: 0.0,
            }],
        );
        c.jitter = 0.0;
        c
    }

    pub fn preset(name: &str, n_traces: usize, seed: u64) -> Result<Self> {
        Ok(match name {
            "two-population" => Self::two_population(n_traces, seed),
            "null" => Self::null(n_traces, seed),
            "timing" => Self::timing_ordered(n_traces, seed),
            "failure-modes" => Self::failure_modes(n_traces, seed),
            "saturated-jsd" => Self::saturated_divergence(n_traces, seed),
            "flat" => Self::flat(n_traces, seed),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset `{other}` (two-population, null, timing, failure-modes, saturated-jsd, flat)"
                )))
            }
        })
    }
}

/// Ground truth for one generated trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub population: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub traces: Vec<TraceRecord>,
    pub provenance: Vec<Provenance>,
}

fn geometric(k: usize, beta: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|r| (-beta * r as f64).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Rate whose geometric profile has the given entropy (entropy falls with beta).
fn beta_for_entropy(k: usize, target: f64) -> f64 {
    if k < 2 || target >= (k as f64).ln() {
        return 0.0;
    }
    bisect_decreasing(0.0, BETA_MAX, target, |b| entropy_of(&geometric(k, b)))
}

/// Solves `f(x) = target` for `f` decreasing on `[lo, hi]`, clamping at the ends.
fn bisect_decreasing(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    if f(lo) <= target {
        return lo;
    }
    if f(hi) >= target {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn distribution(ids: &[TokenId], probs: &[f64]) -> StepDistribution {
    // Underflowed tail entries carry no mass.
    let (s, p): (Vec<TokenId>, Vec<f64>) = ids
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| (*i, *p))
        .unzip();
    let total: f64 = p.iter().sum();
    StepDistribution::new(s, p.into_iter().map(|x| x / total).collect()).expect("geometric profile is a distribution")
}

fn step_record(ids: &[TokenId], probs: &[f64], logged_mass: f64) -> StepRecord {
    StepRecord::new(
        ids.iter()
            .zip(probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(&id, &p)| TokenEntry::new(id, (logged_mass * p).ln().min(0.0)))
            .collect(),
    )
}

fn generate_one(config: &SynthConfig, index: usize, population: usize) -> TraceRecord {
    let pop = &config.populations[population];
    let mut rng = stream_rng(config.seed, index as u64);
    let k = config.k;
    let ln_k = (k as f64).ln();
    let [t_min, t_max] = config.t_range;
    let [lo, hi] = pop.peak_window;
    let len_lo = t_min.max(hi);
    let len = len_lo + (unit_f64(&mut rng) * (t_max - len_lo + 1) as f64) as usize;
    let len = len.min(t_max);
    let peak = lo + (unit_f64(&mut rng) * (hi - lo + 1) as f64) as usize;
    let peak = peak.min(hi) - 1;
    let jitter = |rng: &mut _| 1.0 + config.jitter * uniform(rng, -1.0, 1.0);
    let base_h = (pop.baseline_entropy * jitter(&mut rng)).clamp(0.0, ln_k);
    let target = pop.peak_height * jitter(&mut rng);
    let correct = unit_f64(&mut rng) < pop.correct_rate;

    let base_ids: Vec<TokenId> = (0..k as TokenId).collect();
    let flat = geometric(k, beta_for_entropy(k, base_h));
    let mut baseline: Vec<Vec<f64>> = Vec::with_capacity(len);
    for _ in 0..len {
        if config.step_noise > 0.0 {
            let h = (base_h * (1.0 + config.step_noise * uniform(&mut rng, -1.0, 1.0))).clamp(0.0, ln_k);
            baseline.push(geometric(k, beta_for_entropy(k, h)));
        } else {
            baseline.push(flat.clone());
        }
    }

    let mut steps: Vec<StepRecord> = baseline
        .iter()
        .map(|p| step_record(&base_ids, p, config.logged_mass))
        .collect();

    if target > base_h {
        let churned = ((pop.support_churn * k as f64).ceil() as usize).min(k);
        let mut peak_ids = base_ids.clone();
        for (j, id) in peak_ids.iter_mut().take(churned).enumerate() {
            *id = FRESH_TOKEN_BASE + (index * k + j) as TokenId;
        }
        let prev = (peak > 0).then(|| distribution(&base_ids, &baseline[peak - 1]));
        let beta_base = beta_for_entropy(k, base_h);
        let signal = |beta: f64| {
            let probs = geometric(k, beta);
            let d = distribution(&peak_ids, &probs);
            let div = prev.as_ref().map_or(0.0, |q| jsd(&d, q));
            div + entropy_of(d.probs())
        };
        let beta = bisect_decreasing(0.0, beta_base.max(1e-9), target, signal);
        steps[peak] = step_record(&peak_ids, &geometric(k, beta), config.logged_mass);
    }

    TraceRecord {
        id: format!("synth-{index:05}"),
        dataset: "synthetic".into(),
        model: "planted".into(),
        decoding: Decoding {
            temperature: 0.0,
            top_p: 1.0,
            seed: config.seed,
        },
        steps,
        label: Label {
            correct,
            predicted: if correct { "1" } else { "0" }.into(),
            reference: "1".into(),
        },
        output_text: None,
    }
}

/// Deterministic corpus for `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let shares: Vec<f64> = config.populations.iter().map(|p| p.share).collect();
    let counts = apportion(config.n_traces, &shares);
    let blocks: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(p, &c)| std::iter::repeat_n(p, c))
        .collect();
    let mut rng = stream_rng(config.seed, u64::MAX);
    let order = permutation(&mut rng, blocks.len());
    let assignment: Vec<usize> = order.iter().map(|&i| blocks[i]).collect();

    let traces: Vec<TraceRecord> = assignment
        .par_iter()
        .enumerate()
        .map(|(i, &p)| generate_one(config, i, p))
        .collect();
    let provenance = traces
        .iter()
        .zip(&assignment)
        .map(|(t, &population)| Provenance {
            id: t.id.clone(),
            population,
        })
        .collect();
    Ok(SynthCorpus { traces, provenance })
}

pub fn write_sidecar(path: impl AsRef<Path>, provenance: &[Provenance]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in provenance {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<Provenance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| Error::Json { line: i + 1, source }))
        .collect()
}

/// Literal-definition implementations used for differential testing.
///
/// These are quadratic or otherwise naive on purpose and share no code with
/// the production metrics and signal paths.
pub mod oracle {
    use std::collections::BTreeMap;

    /// Pair counting over every (wrong, correct) pair, ties scored one half.
    pub fn oracle_auc(scores: &[f64], correct: &[bool]) -> Option<f64> {
        let mut credit = 0.0;
        let mut pairs = 0usize;
        for (i, &ci) in correct.iter().enumerate() {
            if ci {
                continue;
            }
            for (j, &cj) in correct.iter().enumerate() {
                if !cj {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
        (pairs > 0).then(|| credit / pairs as f64)
    }

    /// Midrank by counting: `#less + (#equal + 1) / 2`.
    pub fn oracle_midranks(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|&v| {
                let less = values.iter().filter(|&&x| x < v).count() as f64;
                let equal = values.iter().filter(|&&x| x == v).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }

    pub fn oracle_spearman(scores: &[f64], correct: &[bool]) -> Option<f64> {
        if scores.len() < 2 {
            return None;
        }
        let x = oracle_midranks(scores);
        let y = oracle_midranks(&correct.iter().map(|&c| c as u8 as f64).collect::<Vec<_>>());
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        if vx == 0.0 || vy == 0.0 {
            return None;
        }
        Some(cov / (vx * vy).sqrt())
    }

    pub fn oracle_entropy(probs: &[f64]) -> f64 {
        let mut h = 0.0;
        for &p in probs {
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        h
    }

    /// JSD of two `(token, prob)` lists: map alignment, then two KL sums.
    pub fn oracle_jsd(p: &[(u64, f64)], q: &[(u64, f64)]) -> f64 {
        let mut joint: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for &(t, x) in p {
            joint.entry(t).or_default().0 += x;
        }
        for &(t, x) in q {
            joint.entry(t).or_default().1 += x;
        }
        let mut kl_p = 0.0;
        let mut kl_q = 0.0;
        for &(a, b) in joint.values() {
            let m = (a + b) / 2.0;
            if a > 0.0 {
                kl_p += a * (a.ln() - m.ln());
            }
            if b > 0.0 {
                kl_q += b * (b.ln() - m.ln());
            }
        }
        (kl_p + kl_q) / 2.0
    }
}
