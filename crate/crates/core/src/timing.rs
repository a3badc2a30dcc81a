//! Peak-timing analysis: where in a trace the instability peak falls, and how
//! that relates to accuracy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bucket_order, bucket_sizes};
use crate::signal::{TraceDiagnostics, FIXED_WINDOW};

pub const DEFAULT_EARLY: f64 = 0.25;
pub const DEFAULT_LATE: f64 = 0.5;
pub const DEFAULT_RHO_BINS: usize = 10;
/// Early-threshold grid of the standard sensitivity sweep.
pub const SWEEP_EARLY: [f64; 3] = [0.20, 0.25, 0.30];
/// Late-threshold grid of the standard sensitivity sweep.
pub const SWEEP_LATE: [f64; 3] = [0.45, 0.50, 0.60];
/// Window whose strength defines the early-collapse failure mode.
pub const COLLAPSE_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakScheme {
    /// `rho = t* / T`
    Rho,
    /// `rho_50 = t*_50 / 50`
    Rho50,
}

impl PeakScheme {
    fn position(self, d: &TraceDiagnostics) -> f64 {
        match self {
            PeakScheme::Rho => d.rho,
            PeakScheme::Rho50 => d.rho_50,
        }
    }

    /// `(peak step, horizon)` as integers.
    fn fraction(self, d: &TraceDiagnostics) -> (usize, usize) {
        match self {
            PeakScheme::Rho => (d.t_star, d.len),
            PeakScheme::Rho50 => (d.t_star_50, FIXED_WINDOW),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakClass {
    Early,
    Middle,
    Late,
}

impl fmt::Display for PeakClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            PeakClass::Early => "early",
            PeakClass::Middle => "middle",
            PeakClass::Late => "late",
        })
    }
}

/// Strict inequalities at both thresholds; the middle class is closed.
pub fn classify(rho: f64, early: f64, late: f64) -> PeakClass {
    if rho < early {
        PeakClass::Early
    } else if rho > late {
        PeakClass::Late
    } else {
        PeakClass::Middle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: PeakClass,
    pub n: usize,
    pub share: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceClass {
    pub id: String,
    pub class: PeakClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakClassification {
    pub scheme: PeakScheme,
    pub early: f64,
    pub late: f64,
    pub classes: Vec<TraceClass>,
    pub class_table: Vec<ClassRow>,
}

fn check_thresholds(early: f64, late: f64) -> Result<()> {
    if !(early > 0.0 && early <= late && late < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy 0 < early <= late < 1 (got {early}, {late})"
        )));
    }
    Ok(())
}

fn class_stats(diags: &[TraceDiagnostics], labels: &[PeakClass], class: PeakClass) -> (usize, Option<f64>) {
    let members: Vec<bool> = diags
        .iter()
        .zip(labels)
        .filter(|(_, c)| **c == class)
        .map(|(d, _)| d.correct)
        .collect();
    let n = members.len();
    let acc = (n > 0).then(|| members.iter().filter(|c| **c).count() as f64 / n as f64);
    (n, acc)
}

pub fn classify_peaks(diags: &[TraceDiagnostics], early: f64, late: f64, scheme: PeakScheme) -> Result<PeakClassification> {
    check_thresholds(early, late)?;
    let labels: Vec<PeakClass> = diags
        .iter()
        .map(|d| classify(scheme.position(d), early, late))
        .collect();
    let total = diags.len();
    let class_table = [PeakClass::Early, PeakClass::Middle, PeakClass::Late]
        .into_iter()
        .map(|class| {
            let (n, accuracy) = class_stats(diags, &labels, class);
            ClassRow {
                class,
                n,
                share: if total == 0 { 0.0 } else { n as f64 / total as f64 },
                accuracy,
            }
        })
        .collect();
    Ok(PeakClassification {
        scheme,
        early,
        late,
        classes: diags
            .iter()
            .zip(&labels)
            .map(|(d, &class)| TraceClass { id: d.id.clone(), class })
            .collect(),
        class_table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub early_thresh: f64,
    pub late_thresh: f64,
    pub n_early: usize,
    pub acc_early: Option<f64>,
    pub n_late: usize,
    pub acc_late: Option<f64>,
    /// `acc_early - acc_late`
    pub gap: Option<f64>,
}

/// One row per `(early, late)` pair; pairs with `early > late` are skipped.
pub fn threshold_sweep(diags: &[TraceDiagnostics], early_list: &[f64], late_list: &[f64], scheme: PeakScheme) -> Result<Vec<SweepRow>> {
    if early_list.is_empty() || late_list.is_empty() {
        return Err(Error::InvalidArgument("threshold lists must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &early in early_list {
        for &late in late_list {
            if check_thresholds(early, late).is_err() {
                log::warn!("skipping invalid threshold pair early={early} late={late}");
                continue;
            }
            let labels: Vec<PeakClass> = diags
                .iter()
                .map(|d| classify(scheme.position(d), early, late))
                .collect();
            let (n_early, acc_early) = class_stats(diags, &labels, PeakClass::Early);
            let (n_late, acc_late) = class_stats(diags, &labels, PeakClass::Late);
            rows.push(SweepRow {
                early_thresh: early,
                late_thresh: late,
                n_early,
                acc_early,
                n_late,
                acc_late,
                gap: acc_early.zip(acc_late).map(|(a, b)| a - b),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub accuracy: Option<f64>,
}

/// Equal-width bins `[i/n, (i+1)/n)`, the last one closed at 1.
///
/// Bin membership uses the integer peak step, `floor(t* * n / T)`, so ratios
/// that land on a bin edge are placed exactly.
pub fn rho_bins(diags: &[TraceDiagnostics], n_bins: usize, scheme: PeakScheme) -> Result<Vec<RhoBin>> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be >= 1".into()));
    }
    let mut counts = vec![(0usize, 0usize); n_bins];
    for d in diags {
        let (step, horizon) = scheme.fraction(d);
        let bin = (step * n_bins / horizon).min(n_bins - 1);
        counts[bin].0 += 1;
        counts[bin].1 += usize::from(d.correct);
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, (n, hits))| RhoBin {
            lo: i as f64 / n_bins as f64,
            hi: (i + 1) as f64 / n_bins as f64,
            n,
            accuracy: (n > 0).then(|| hits as f64 / n as f64),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    StableWrong,
    EarlyCollapse,
    UnstableWrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureModeBreakdown {
    pub stable_wrong: usize,
    pub early_collapse: usize,
    pub unstable_wrong: usize,
    pub assignments: Vec<(String, FailureMode)>,
}

/// Splits wrong traces into three disjoint failure modes.
///
/// Quintiles are taken within the wrong traces, ordered by `(score, id)`.
/// Lowest `S` quintile is stable-but-wrong; of the rest, the highest `S_20`
/// quintile is early collapse; everything else is unstable-wrong.
pub fn failure_modes(diags: &[TraceDiagnostics]) -> Result<FailureModeBreakdown> {
    let wrong: Vec<&TraceDiagnostics> = diags.iter().filter(|d| !d.correct).collect();
    if wrong.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "failure-mode quintiles need at least 5 wrong traces, found {}",
            wrong.len()
        )));
    }
    let ids: Vec<&str> = wrong.iter().map(|d| d.id.as_str()).collect();
    let strength: Vec<f64> = wrong.iter().map(|d| d.strength).collect();
    let early: Vec<f64> = wrong
        .iter()
        .map(|d| {
            d.window(COLLAPSE_WINDOW).ok_or_else(|| {
                Error::InvalidArgument(format!("diagnostics for `{}` lack S_{COLLAPSE_WINDOW}", d.id))
            })
        })
        .collect::<Result<_>>()?;
    let sizes = bucket_sizes(wrong.len(), 5);

    let mut modes = vec![FailureMode::UnstableWrong; wrong.len()];
    let by_early = bucket_order(&early, &ids);
    for &k in &by_early[wrong.len() - sizes[4]..] {
        modes[k] = FailureMode::EarlyCollapse;
    }
    let by_strength = bucket_order(&strength, &ids);
    for &k in &by_strength[..sizes[0]] {
        modes[k] = FailureMode::StableWrong;
    }

    let count = |m: FailureMode| modes.iter().filter(|x| **x == m).count();
    Ok(FailureModeBreakdown {
        stable_wrong: count(FailureMode::StableWrong),
        early_collapse: count(FailureMode::EarlyCollapse),
        unstable_wrong: count(FailureMode::UnstableWrong),
        assignments: ids.iter().map(|s| s.to_string()).zip(modes).collect(),
    })
}

/// Everything the timing command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub early: f64,
    pub late: f64,
    pub rho: PeakClassification,
    pub rho_50: PeakClassification,
    pub sweep: Vec<SweepRow>,
    pub rho_bins: Vec<RhoBin>,
    pub failure_modes: Option<FailureModeBreakdown>,
}

pub fn timing_report(diags: &[TraceDiagnostics], early: f64, late: f64, n_bins: usize) -> Result<TimingReport> {
    let failure_modes = match failure_modes(diags) {
        Ok(b) => Some(b),
        Err(e) => {
            log::warn!("failure modes skipped: {e}");
            None
        }
    };
    Ok(TimingReport {
        early,
        late,
        rho: classify_peaks(diags, early, late, PeakScheme::Rho)?,
        rho_50: classify_peaks(diags, early, late, PeakScheme::Rho50)?,
        sweep: threshold_sweep(diags, &SWEEP_EARLY, &SWEEP_LATE, PeakScheme::Rho)?,
        rho_bins: rho_bins(diags, n_bins, PeakScheme::Rho)?,
        failure_modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn diag(id: &str, t_star: usize, len: usize, correct: bool) -> TraceDiagnostics {
        TraceDiagnostics {
            id: id.into(),
            correct,
            len,
            strength: 1.0,
            window_strength: BTreeMap::from([(20, 1.0)]),
            t_star,
            rho: t_star as f64 / len as f64,
            t_star_50: t_star.min(50),
            rho_50: t_star.min(50) as f64 / 50.0,
            margin_at_peak: None,
            margin_drop: None,
            jaccard_overlap: 1.0,
            turnover: 0.0,
            peak_at_first_step: t_star == 1,
            series: None,
        }
    }

    #[test]
    fn boundary_is_middle() {
        assert_eq!(classify(0.25, 0.25, 0.5), PeakClass::Middle);
        assert_eq!(classify(0.5, 0.25, 0.5), PeakClass::Middle);
        assert_eq!(classify(0.2499, 0.25, 0.5), PeakClass::Early);
        assert_eq!(classify(0.5001, 0.25, 0.5), PeakClass::Late);
        let d = [diag("a", 1, 4, true)];
        let c = classify_peaks(&d, 0.25, 0.5, PeakScheme::Rho).unwrap();
        assert_eq!(c.classes[0].class, PeakClass::Middle);
    }

    #[test]
    fn bad_thresholds_error() {
        assert!(classify_peaks(&[], 0.6, 0.5, PeakScheme::Rho).is_err());
    }

    #[test]
    fn equal_thresholds_split_everything_but_the_midpoint() {
        let d: Vec<_> = (1..=10).map(|t| diag(&t.to_string(), t, 10, t < 5)).collect();
        let rows = threshold_sweep(&d, &[0.5], &[0.5], PeakScheme::Rho).unwrap();
        assert_eq!(rows[0].n_early + rows[0].n_late, 9);
        let skipped = threshold_sweep(&d, &[0.6], &[0.5], PeakScheme::Rho).unwrap();
        assert!(skipped.is_empty());
    }

    #[test]
    fn rho_one_lands_in_last_bin() {
        let d: Vec<_> = (0..7).map(|i| diag(&i.to_string(), 9, 9, true)).collect();
        let bins = rho_bins(&d, 10, PeakScheme::Rho).unwrap();
        assert_eq!(bins[9].n, 7);
        assert!(bins[..9].iter().all(|b| b.n == 0 && b.accuracy.is_none()));
    }

    #[test]
    fn single_bin_is_corpus_accuracy() {
        let d = [diag("a", 1, 4, true), diag("b", 3, 4, false)];
        let bins = rho_bins(&d, 1, PeakScheme::Rho).unwrap();
        assert_eq!((bins[0].n, bins[0].accuracy), (2, Some(0.5)));
    }

    #[test]
    fn edges_are_exact() {
        // 3/10 sits on the lower edge of bin 3.
        let bins = rho_bins(&[diag("a", 3, 10, true)], 10, PeakScheme::Rho).unwrap();
        assert_eq!(bins[3].n, 1);
    }

    #[test]
    fn failure_modes_need_five_wrong() {
        let d: Vec<_> = (0..10).map(|i| diag(&i.to_string(), 1, 4, true)).collect();
        assert!(failure_modes(&d).is_err());
    }

    #[test]
    fn failure_modes_with_all_ties_partition() {
        let d: Vec<_> = (0..12).map(|i| diag(&format!("{i:02}"), 1, 4, false)).collect();
        let b = failure_modes(&d).unwrap();
        assert_eq!(b.stable_wrong + b.early_collapse + b.unstable_wrong, 12);
        // sizes [3,3,2,2,2]: lowest three ids stable, highest two early collapse.
        assert_eq!((b.stable_wrong, b.early_collapse, b.unstable_wrong), (3, 2, 7));
    }
}
