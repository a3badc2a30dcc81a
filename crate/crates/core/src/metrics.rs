//! Corpus-level evaluation of a per-trace score against correctness labels.
//!
//! Conventions: "wrong" is the positive class for AUC, ties count one half;
//! Spearman correlates score midranks with correctness encoded 1 = correct,
//! 0 = wrong, so a score that rises with failure gives a negative value.
//! Statistics that are undefined on a sample (single class, constant input)
//! come back as `None` and are listed by name in [`EvalReport::undefined`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{index_below, quantile_sorted, stream_rng};

pub const DEFAULT_BUCKETS: usize = 5;
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
/// Redraw attempts per resample before bootstrapping gives up.
pub const MAX_REDRAWS: usize = 1000;

/// Average 1-based ranks, ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random wrong example outscores a random correct one
/// (Mann-Whitney U over `n_wrong * n_correct`).
pub fn auc_wrong(scores: &[f64], correct: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), correct.len(), "scores and labels differ in length");
    let n_wrong = correct.iter().filter(|c| !**c).count();
    let n_correct = correct.len() - n_wrong;
    if n_wrong == 0 || n_correct == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(correct)
        .filter(|(_, c)| !**c)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_wrong * (n_wrong + 1)) as f64 / 2.0;
    Some(u / (n_wrong as f64 * n_correct as f64))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between scores and correctness (1 = correct).
pub fn spearman(scores: &[f64], correct: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), correct.len(), "scores and labels differ in length");
    if scores.len() < 2 {
        return None;
    }
    let encoded: Vec<f64> = correct.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    pearson(&midranks(scores), &midranks(&encoded))
}

pub fn accuracy(correct: &[bool]) -> Option<f64> {
    (!correct.is_empty()).then(|| correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub bucket: String,
    pub n: usize,
    pub accuracy: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// Sizes of `n_buckets` contiguous groups of `n` items; the first `n % n_buckets`
/// groups get one extra item.
pub fn bucket_sizes(n: usize, n_buckets: usize) -> Vec<usize> {
    let (base, extra) = (n / n_buckets, n % n_buckets);
    (0..n_buckets).map(|i| base + usize::from(i < extra)).collect()
}

/// Position order of the examples by `(score asc, id asc)`.
pub fn bucket_order(scores: &[f64], ids: &[&str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| ids[a].cmp(ids[b])));
    order
}

/// Equal-size quantile buckets, `B1` holding the lowest scores.
pub fn bucketize(scores: &[f64], correct: &[bool], ids: &[&str], n_buckets: usize) -> Result<Vec<Bucket>> {
    assert!(scores.len() == correct.len() && scores.len() == ids.len());
    if n_buckets == 0 {
        return Err(Error::InvalidArgument("n_buckets must be >= 1".into()));
    }
    if scores.len() < n_buckets {
        return Err(Error::InvalidArgument(format!(
            "{} examples cannot fill {n_buckets} buckets",
            scores.len()
        )));
    }
    let order = bucket_order(scores, ids);
    let mut start = 0;
    Ok(bucket_sizes(scores.len(), n_buckets)
        .into_iter()
        .enumerate()
        .map(|(i, size)| {
            let members = &order[start..start + size];
            start += size;
            let hits = members.iter().filter(|&&k| correct[k]).count();
            Bucket {
                bucket: format!("B{}", i + 1),
                n: size,
                accuracy: hits as f64 / size as f64,
                ci_lo: None,
                ci_hi: None,
            }
        })
        .collect())
}

fn bucket_accuracies_of(order: &[usize], correct: impl Fn(usize) -> bool, n_buckets: usize) -> Vec<f64> {
    let mut start = 0;
    bucket_sizes(order.len(), n_buckets)
        .into_iter()
        .map(|size| {
            let members = &order[start..start + size];
            start += size;
            members.iter().filter(|&&k| correct(k)).count() as f64 / size as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {} outside (0, 1)", self.level)));
        }
        if self.resamples == 0 {
            return Err(Error::InvalidArgument("resamples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub intervals: Vec<[f64; 2]>,
    /// Resample draws thrown away because the statistic was undefined on them.
    pub discarded: usize,
}

/// Percentile bootstrap over example indices for a vector-valued statistic.
///
/// Resample `i` draws `n` indices with replacement from stream `(seed, i)`;
/// an undefined draw is discarded and the same stream draws again. Each output
/// coordinate gets its own percentile interval.
pub fn bootstrap_indices<F>(n: usize, width: usize, config: &BootstrapConfig, statistic: F) -> Result<BootstrapOutcome>
where
    F: Fn(&[usize]) -> Option<Vec<f64>> + Sync,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::Undefined("bootstrap over an empty sample".into()));
    }
    let draws: Vec<Result<(Vec<f64>, usize)>> = (0..config.resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, i as u64);
            let mut idx = vec![0usize; n];
            for attempt in 0..MAX_REDRAWS {
                idx.iter_mut().for_each(|k| *k = index_below(&mut rng, n));
                if let Some(v) = statistic(&idx) {
                    assert_eq!(v.len(), width, "statistic width mismatch");
                    return Ok((v, attempt));
                }
            }
            Err(Error::Undefined(format!(
                "statistic undefined on {MAX_REDRAWS} consecutive draws of resample {i}"
            )))
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(config.resamples); width];
    let mut discarded = 0;
    for d in draws {
        let (values, skipped) = d?;
        discarded += skipped;
        for (col, v) in columns.iter_mut().zip(values) {
            col.push(v);
        }
    }
    let tail = (1.0 - config.level) / 2.0;
    let intervals = columns
        .into_iter()
        .map(|mut col| {
            col.sort_by(f64::total_cmp);
            [quantile_sorted(&col, tail), quantile_sorted(&col, 1.0 - tail)]
        })
        .collect();
    Ok(BootstrapOutcome { intervals, discarded })
}

/// Scalar statistics available to [`bootstrap_ci`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    AucWrong,
    Spearman,
    Accuracy,
}

impl Statistic {
    pub fn evaluate(self, scores: &[f64], correct: &[bool]) -> Option<f64> {
        match self {
            Statistic::AucWrong => auc_wrong(scores, correct),
            Statistic::Spearman => spearman(scores, correct),
            Statistic::Accuracy => accuracy(correct),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub discarded: usize,
}

pub fn bootstrap_ci(
    statistic: Statistic,
    scores: &[f64],
    correct: &[bool],
    config: &BootstrapConfig,
) -> Result<ConfidenceInterval> {
    config.validate()?;
    if statistic.evaluate(scores, correct).is_none() {
        return Err(Error::Undefined(format!("{statistic:?} on the full sample")));
    }
    let outcome = bootstrap_indices(scores.len(), 1, config, |idx| {
        let s: Vec<f64> = idx.iter().map(|&k| scores[k]).collect();
        let c: Vec<bool> = idx.iter().map(|&k| correct[k]).collect();
        statistic.evaluate(&s, &c).map(|v| vec![v])
    })?;
    let [lo, hi] = outcome.intervals[0];
    Ok(ConfidenceInterval {
        lo,
        hi,
        discarded: outcome.discarded,
    })
}

/// Percentile intervals for each bucket's accuracy, re-bucketing every resample.
pub fn bucket_accuracy_cis(
    scores: &[f64],
    correct: &[bool],
    ids: &[&str],
    n_buckets: usize,
    config: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    if scores.len() < n_buckets {
        return Err(Error::InvalidArgument("fewer examples than buckets".into()));
    }
    bootstrap_indices(scores.len(), n_buckets, config, |idx| {
        let mut order: Vec<usize> = (0..idx.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (idx[a], idx[b]);
            scores[x].total_cmp(&scores[y]).then_with(|| ids[x].cmp(ids[y]))
        });
        Some(bucket_accuracies_of(&order, |k| correct[idx[k]], n_buckets))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_buckets: usize,
    pub bootstrap: Option<BootstrapConfig>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_buckets: DEFAULT_BUCKETS,
            bootstrap: Some(BootstrapConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub statistic: String,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub auc_wrong: Option<f64>,
    pub spearman: Option<f64>,
    pub buckets: Vec<Bucket>,
    /// Accuracy of the highest bucket minus the lowest.
    pub bucket_slope: Option<f64>,
    pub auc_ci: Option<[f64; 2]>,
    pub bootstrap: Option<BootstrapConfig>,
    pub bootstrap_discarded: usize,
    pub undefined: Vec<String>,
}

impl EvalReport {
    pub fn bucket_cis(&self) -> Option<Vec<[f64; 2]>> {
        self.buckets
            .iter()
            .map(|b| Some([b.ci_lo?, b.ci_hi?]))
            .collect()
    }
}

/// Accuracy, AUC, Spearman, bucket table and (optionally) bootstrap intervals.
pub fn evaluate(
    statistic: &str,
    scores: &[f64],
    correct: &[bool],
    ids: &[&str],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let n = scores.len();
    let accuracy = accuracy(correct);
    let auc = auc_wrong(scores, correct);
    let rho = spearman(scores, correct);
    let mut buckets = if n >= options.n_buckets && options.n_buckets > 0 {
        bucketize(scores, correct, ids, options.n_buckets)?
    } else {
        Vec::new()
    };
    let bucket_slope = match (buckets.first(), buckets.last()) {
        (Some(first), Some(last)) => Some(last.accuracy - first.accuracy),
        _ => None,
    };
    let mut undefined = Vec::new();
    for (name, missing) in [
        ("accuracy", accuracy.is_none()),
        ("auc_wrong", auc.is_none()),
        ("spearman", rho.is_none()),
        ("buckets", buckets.is_empty()),
    ] {
        if missing {
            undefined.push(name.to_string());
        }
    }

    let mut auc_ci = None;
    let mut discarded = 0;
    if let Some(cfg) = options.bootstrap.as_ref() {
        if auc.is_some() {
            let ci = bootstrap_ci(Statistic::AucWrong, scores, correct, cfg)?;
            discarded += ci.discarded;
            auc_ci = Some([ci.lo, ci.hi]);
        } else {
            undefined.push("auc_ci".into());
        }
        if !buckets.is_empty() {
            let out = bucket_accuracy_cis(scores, correct, ids, options.n_buckets, cfg)?;
            discarded += out.discarded;
            for (b, [lo, hi]) in buckets.iter_mut().zip(out.intervals) {
                b.ci_lo = Some(lo);
                b.ci_hi = Some(hi);
            }
        }
    }

    Ok(EvalReport {
        statistic: statistic.to_string(),
        n,
        accuracy,
        auc_wrong: auc,
        spearman: rho,
        buckets,
        bucket_slope,
        auc_ci,
        bootstrap: options.bootstrap,
        bootstrap_discarded: discarded,
        undefined,
    })
}

/// Bucket table as CSV: `bucket,n,accuracy,ci_lo,ci_hi`.
pub fn write_bucket_csv<W: std::io::Write>(writer: W, buckets: &[Bucket]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for b in buckets {
        w.serialize(b)?;
    }
    w.flush().map_err(|e| Error::io("<bucket csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: bool = true;
    const F: bool = false;

    #[test]
    fn auc_examples() {
        assert_eq!(auc_wrong(&[1.0, 2.0, 3.0, 4.0], &[T, T, F, F]), Some(1.0));
        assert_eq!(auc_wrong(&[2.0; 6], &[T, F, T, F, F, T]), Some(0.5));
        // Wrong scores {1, 5} against correct {3, 2, 4}: 3 of 6 pairs.
        assert_eq!(auc_wrong(&[3.0, 1.0, 2.0, 5.0, 4.0], &[T, F, T, F, T]), Some(0.5));
        assert_eq!(auc_wrong(&[3.0, 1.0, 2.0, 5.0, 4.0], &[T, F, F, F, T]), Some(2.0 / 6.0));
        assert_eq!(auc_wrong(&[1.0, 2.0], &[T, T]), None);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 1.0, 0.0, 0.0], &[T, T, F, F]), Some(1.0));
        assert_eq!(spearman(&[2.0, 1.0], &[T, F]), Some(1.0));
        // Increasing scores, correctness [1,1,0,0]: midrank Pearson by hand.
        // ranks x = 1..4, y midranks = [3.5,3.5,1.5,1.5]; r = -4 / sqrt(5 * 4)
        let v = spearman(&[1.0, 2.0, 3.0, 4.0], &[T, T, F, F]).unwrap();
        assert!((v - (-4.0 / 20f64.sqrt())).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0], &[T, F]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[T, T]), None);
    }

    #[test]
    fn bucket_size_rule() {
        assert_eq!(bucket_sizes(10, 5), [2, 2, 2, 2, 2]);
        assert_eq!(bucket_sizes(12, 5), [3, 3, 2, 2, 2]);
        let ids: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert!(bucketize(&[1.0; 4], &[T; 4], &ids, 5).is_err());
    }

    #[test]
    fn planted_top_quintile_wrong() {
        let n = 50;
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let correct: Vec<bool> = (0..n).map(|i| i < 40).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("{i:03}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let b = bucketize(&scores, &correct, &ids, 5).unwrap();
        assert_eq!(b.iter().map(|b| b.accuracy).collect::<Vec<_>>(), [1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn ties_straddle_buckets_by_id() {
        let ids = ["e", "d", "c", "b", "a"];
        let b = bucketize(&[0.0; 5], &[T, T, T, T, F], &ids, 5).unwrap();
        // "a" sorts first and is the wrong one.
        assert_eq!(b[0].accuracy, 0.0);
    }

    #[test]
    fn bootstrap_rejects_bad_level() {
        let cfg = BootstrapConfig { level: 1.0, ..Default::default() };
        assert!(bootstrap_ci(Statistic::Accuracy, &[1.0], &[T], &cfg).is_err());
    }

    #[test]
    fn bootstrap_degenerate_corpus_has_zero_width() {
        let cfg = BootstrapConfig { resamples: 200, ..Default::default() };
        let ci = bootstrap_ci(Statistic::Accuracy, &[0.3; 20], &[T; 20], &cfg).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
        let correct: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let ci = bootstrap_ci(Statistic::AucWrong, &[0.3; 20], &correct, &cfg).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.5, 0.5));
    }

    #[test]
    fn bootstrap_counts_discards() {
        // Three examples, one wrong: many resamples contain a single class.
        let cfg = BootstrapConfig { resamples: 100, ..Default::default() };
        let ci = bootstrap_ci(Statistic::AucWrong, &[1.0, 2.0, 3.0], &[T, T, F], &cfg).unwrap();
        assert!(ci.discarded > 0);
        assert!(ci.lo <= ci.hi);
    }

    #[test]
    fn empty_corpus_report_is_all_undefined() {
        let r = evaluate("S", &[], &[], &[], &EvalOptions::default()).unwrap();
        assert_eq!(r.n, 0);
        assert!(r.accuracy.is_none() && r.auc_wrong.is_none() && r.spearman.is_none());
        assert!(r.undefined.contains(&"auc_wrong".to_string()));
    }

    #[test]
    fn bucket_csv_columns() {
        let mut out = Vec::new();
        let b = Bucket {
            bucket: "B1".into(),
            n: 2,
            accuracy: 0.5,
            ci_lo: Some(0.0),
            ci_hi: None,
        };
        write_bucket_csv(&mut out, &[b]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "bucket,n,accuracy,ci_lo,ci_hi\nB1,2,0.5,0.0,\n");
    }
}
