#![allow(dead_code)]

use instab::numeric::{index_below, stream_rng, unit_f64};
use instab::trace::{Decoding, Label, StepDistribution, StepRecord, TokenEntry, TraceRecord};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(seed, index)
}

/// Random positive weights over distinct token ids below 64, normalized.
/// Skewed weights are mixed with near-uniform ones so both tails get exercised.
pub fn random_pairs(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<(u64, f64)> {
    let len = 1 + index_below(rng, max_len);
    let power = [0.2, 1.0, 4.0, 12.0][index_below(rng, 4)];
    let mut ids: Vec<u64> = (0..64).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, index_below(rng, i + 1));
    }
    let w: Vec<f64> = (0..len).map(|_| unit_f64(rng).powf(power) + 1e-300).collect();
    let total: f64 = w.iter().sum();
    ids.into_iter().zip(w).map(|(id, x)| (id, x / total)).collect()
}

pub fn distribution(pairs: &[(u64, f64)]) -> StepDistribution {
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    StepDistribution::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / total).collect()).unwrap()
}

/// Scores with frequent ties and labels with both classes (usually).
pub fn random_corpus(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = 1 + index_below(rng, max_n);
    let levels = 1 + index_below(rng, 2 * n);
    let scores = (0..n).map(|_| index_below(rng, levels) as f64 * 0.37 - 3.0).collect();
    let p_correct = unit_f64(rng);
    let correct = (0..n).map(|_| unit_f64(rng) < p_correct).collect();
    (scores, correct)
}

pub fn random_trace(rng: &mut ChaCha8Rng, id: &str, max_t: usize, max_k: usize) -> TraceRecord {
    let t = 1 + index_below(rng, max_t);
    let steps = (0..t)
        .map(|_| {
            let mass = 0.5 + 0.45 * unit_f64(rng);
            StepRecord::new(
                random_pairs(rng, max_k)
                    .into_iter()
                    .map(|(id, p)| TokenEntry::new(id, (p * mass).ln()))
                    .collect(),
            )
        })
        .collect();
    TraceRecord {
        id: id.to_string(),
        dataset: "random".into(),
        model: "random".into(),
        decoding: Decoding::default(),
        steps,
        label: Label {
            correct: unit_f64(rng) < 0.5,
            predicted: String::new(),
            reference: String::new(),
        },
        output_text: None,
    }
}

pub fn random_corpus_traces(seed: u64, n: usize, max_t: usize, max_k: usize) -> Vec<TraceRecord> {
    (0..n)
        .map(|i| random_trace(&mut rng(seed, i as u64), &format!("r{i:04}"), max_t, max_k))
        .collect()
}
