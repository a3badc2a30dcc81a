//! Negative controls and ablations.
//!
//! Shuffles are deterministic per trace: the permutation comes from
//! [`crate::numeric::permutation`] on stream 0 of a generator seeded with
//! [`crate::numeric::trace_hash`]`(shuffle_seed, trace id)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::numeric::{permutation, stream_rng, trace_hash};
use crate::signal::{step_series, summarize, window_max, SeriesConfig, StepSeries, SummaryConfig, TraceDiagnostics};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlKind {
    #[serde(rename = "shuffle_p")]
    ShuffleSteps,
    #[serde(rename = "shuffle_i")]
    ShuffleSeries,
    #[serde(rename = "baseline_SH")]
    BaselineEntropy,
    #[serde(rename = "baseline_SdH")]
    BaselineEntropyChange,
    #[serde(rename = "baseline_SD")]
    BaselineDivergence,
    #[serde(rename = "lambda_ablation")]
    LambdaAblation,
    #[serde(rename = "topk_sweep")]
    TopkSweep,
    #[serde(rename = "window_sweep")]
    WindowSweep,
}

impl ControlKind {
    pub const ALL: [ControlKind; 8] = [
        ControlKind::ShuffleSteps,
        ControlKind::ShuffleSeries,
        ControlKind::BaselineEntropy,
        ControlKind::BaselineEntropyChange,
        ControlKind::BaselineDivergence,
        ControlKind::LambdaAblation,
        ControlKind::TopkSweep,
        ControlKind::WindowSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlKind::ShuffleSteps => "shuffle_p",
            ControlKind::ShuffleSeries => "shuffle_i",
            ControlKind::BaselineEntropy => "baseline_SH",
            ControlKind::BaselineEntropyChange => "baseline_SdH",
            ControlKind::BaselineDivergence => "baseline_SD",
            ControlKind::LambdaAblation => "lambda_ablation",
            ControlKind::TopkSweep => "topk_sweep",
            ControlKind::WindowSweep => "window_sweep",
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControlKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown control kind `{s}`")))
    }
}

/// Declarative description of a control or ablation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub kind: ControlKind,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub windows: Vec<usize>,
    /// Restricts baseline statistics to `t <= window`.
    #[serde(default)]
    pub baseline_window: Option<usize>,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl ControlSpec {
    pub fn new(kind: ControlKind) -> Self {
        Self {
            kind,
            lambdas: Vec::new(),
            ks: Vec::new(),
            windows: Vec::new(),
            baseline_window: None,
            shuffle_seed: 0,
        }
    }

    /// Control with the standard sweep grid for `kind` filled in.
    pub fn with_defaults(kind: ControlKind) -> Self {
        let mut s = Self::new(kind);
        match kind {
            ControlKind::LambdaAblation => s.lambdas = vec![0.0, 1.0],
            ControlKind::TopkSweep => s.ks = vec![10, 20, 50],
            ControlKind::WindowSweep => s.windows = vec![10, 20, 50, 100],
            _ => {}
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |what: &str| Err(Error::InvalidArgument(format!("{} requires a non-empty {what} list", self.kind)));
        match self.kind {
            ControlKind::LambdaAblation if self.lambdas.is_empty() => missing("lambda"),
            ControlKind::TopkSweep if self.ks.is_empty() => missing("k"),
            ControlKind::WindowSweep if self.windows.is_empty() => missing("window"),
            _ => {
                if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(Error::InvalidArgument("lambda values must be finite and >= 0".into()));
                }
                if self.ks.contains(&0) || self.windows.contains(&0) {
                    return Err(Error::InvalidArgument("k and window values must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

fn trace_permutation(trace_id: &str, len: usize, shuffle_seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(trace_hash(shuffle_seed, trace_id), 0);
    permutation(&mut rng, len)
}

/// Trace with its steps permuted; labels and metadata unchanged.
pub fn shuffle_steps(trace: &TraceRecord, shuffle_seed: u64) -> TraceRecord {
    let perm = trace_permutation(&trace.id, trace.len(), shuffle_seed);
    let mut out = trace.clone();
    out.steps = perm.iter().map(|&i| trace.steps[i].clone()).collect();
    out
}

/// Series with `I` permuted; `H` and `D` are kept but flagged stale.
pub fn shuffle_series(series: &StepSeries, trace_id: &str, shuffle_seed: u64) -> StepSeries {
    let perm = trace_permutation(trace_id, series.len(), shuffle_seed);
    let mut out = series.clone();
    out.instability = perm.iter().map(|&i| series.instability[i]).collect();
    out.stale_components = true;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// `max_t H_t`
    #[serde(rename = "S_H")]
    Entropy,
    /// `max_t |H_t - H_{t-1}|`, 0 for a one-step trace
    #[serde(rename = "S_dH")]
    EntropyChange,
    /// `max_t D_t`
    #[serde(rename = "S_D")]
    Divergence,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Entropy => "S_H",
            BaselineKind::EntropyChange => "S_dH",
            BaselineKind::Divergence => "S_D",
        }
    }
}

pub fn baseline_statistic(series: &StepSeries, kind: BaselineKind, window: Option<usize>) -> f64 {
    let limit = window.unwrap_or(usize::MAX).min(series.len());
    match kind {
        BaselineKind::Entropy => window_max(&series.entropy, limit),
        BaselineKind::Divergence => window_max(&series.divergence, limit),
        BaselineKind::EntropyChange => series.entropy[..limit]
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max),
    }
}

/// Shared knobs for corpus-level controls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisOptions {
    pub series: SeriesConfig,
    pub summary: SummaryConfig,
    pub eval: EvalOptions,
}

/// Series and diagnostics of every trace, in corpus order.
pub fn diagnose(corpus: &[TraceRecord], series: &SeriesConfig, summary: &SummaryConfig) -> Vec<(StepSeries, TraceDiagnostics)> {
    corpus
        .par_iter()
        .map(|t| {
            let s = step_series(t, series);
            let d = summarize(t, &s, summary);
            (s, d)
        })
        .collect()
}

/// Evaluates an arbitrary per-trace score over `corpus`.
pub fn evaluate_scores(name: &str, corpus: &[TraceRecord], scores: &[f64], eval: &EvalOptions) -> Result<EvalReport> {
    let correct: Vec<bool> = corpus.iter().map(TraceRecord::correct).collect();
    let ids: Vec<&str> = corpus.iter().map(|t| t.id.as_str()).collect();
    evaluate(name, scores, &correct, &ids, eval)
}

/// Which per-trace strength feeds the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrengthStatistic {
    /// `S = max_t I_t`
    Peak,
    /// `S_w = max_{t <= w} I_t`
    Window(usize),
}

impl StrengthStatistic {
    pub fn name(self) -> String {
        match self {
            StrengthStatistic::Peak => "S".into(),
            StrengthStatistic::Window(w) => format!("S_{w}"),
        }
    }

    pub fn of_series(self, series: &StepSeries) -> f64 {
        match self {
            StrengthStatistic::Peak => window_max(&series.instability, series.len()),
            StrengthStatistic::Window(w) => window_max(&series.instability, w),
        }
    }
}

impl FromStr for StrengthStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "S" {
            return Ok(StrengthStatistic::Peak);
        }
        t.strip_prefix("S_")
            .or_else(|| t.strip_prefix('S'))
            .and_then(|w| w.parse::<usize>().ok())
            .filter(|w| *w > 0)
            .map(StrengthStatistic::Window)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown statistic `{s}` (use S or S_<w>)")))
    }
}

/// One row of a long-format control table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub model: String,
    pub dataset: String,
    pub control: String,
    pub setting: String,
    pub statistic: String,
    pub n: usize,
    pub auc_wrong: Option<f64>,
    pub spearman: Option<f64>,
    pub bucket_slope: Option<f64>,
}

fn corpus_label(corpus: &[TraceRecord], field: impl Fn(&TraceRecord) -> &str) -> String {
    let mut seen: Vec<&str> = Vec::new();
    for t in corpus {
        let v = field(t);
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen.join("+")
}

fn row(corpus: &[TraceRecord], control: &str, setting: String, report: &EvalReport) -> ControlRow {
    ControlRow {
        model: corpus_label(corpus, |t| &t.model),
        dataset: corpus_label(corpus, |t| &t.dataset),
        control: control.to_string(),
        setting,
        statistic: report.statistic.clone(),
        n: report.n,
        auc_wrong: report.auc_wrong,
        spearman: report.spearman,
        bucket_slope: report.bucket_slope,
    }
}

fn strength_report(
    corpus: &[TraceRecord],
    all_series: &[StepSeries],
    statistic: StrengthStatistic,
    eval: &EvalOptions,
) -> Result<EvalReport> {
    let scores: Vec<f64> = all_series.iter().map(|s| statistic.of_series(s)).collect();
    evaluate_scores(&statistic.name(), corpus, &scores, eval)
}

fn series_all(corpus: &[TraceRecord], config: &SeriesConfig) -> Vec<StepSeries> {
    corpus.par_iter().map(|t| step_series(t, config)).collect()
}

/// One report per effective `k`, re-deriving every series from stored logprobs.
pub fn topk_sweep(corpus: &[TraceRecord], ks: &[usize], options: &AnalysisOptions) -> Result<Vec<(usize, EvalReport)>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("topk_sweep requires a non-empty k list".into()));
    }
    ks.iter()
        .map(|&k| {
            let cfg = SeriesConfig { effective_k: Some(k), ..options.series };
            let series = series_all(corpus, &cfg);
            Ok((k, strength_report(corpus, &series, StrengthStatistic::Peak, &options.eval)?))
        })
        .collect()
}

/// One report per window `w` for the score `S_w`.
pub fn window_sweep(corpus: &[TraceRecord], ws: &[usize], options: &AnalysisOptions) -> Result<Vec<(usize, EvalReport)>> {
    if ws.is_empty() {
        return Err(Error::InvalidArgument("window_sweep requires a non-empty window list".into()));
    }
    let series = series_all(corpus, &options.series);
    ws.iter()
        .map(|&w| Ok((w, strength_report(corpus, &series, StrengthStatistic::Window(w), &options.eval)?)))
        .collect()
}

/// One report per `lambda` for the score `S`.
pub fn lambda_ablation(corpus: &[TraceRecord], lambdas: &[f64], options: &AnalysisOptions) -> Result<Vec<(f64, EvalReport)>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("lambda_ablation requires a non-empty lambda list".into()));
    }
    let series = series_all(corpus, &options.series);
    lambdas
        .iter()
        .map(|&l| {
            let relambda: Vec<StepSeries> = series.iter().map(|s| s.with_lambda(l)).collect();
            Ok((l, strength_report(corpus, &relambda, StrengthStatistic::Peak, &options.eval)?))
        })
        .collect()
}

const SHUFFLE_STATISTICS: [StrengthStatistic; 2] = [StrengthStatistic::Peak, StrengthStatistic::Window(50)];

/// Runs a control and returns its long-format table rows.
pub fn run_control(corpus: &[TraceRecord], spec: &ControlSpec, options: &AnalysisOptions) -> Result<Vec<ControlRow>> {
    spec.validate()?;
    let name = spec.kind.name();
    let mut rows = Vec::new();
    match spec.kind {
        ControlKind::ShuffleSteps | ControlKind::ShuffleSeries => {
            let original = series_all(corpus, &options.series);
            let shuffled: Vec<StepSeries> = if spec.kind == ControlKind::ShuffleSteps {
                corpus
                    .par_iter()
                    .map(|t| step_series(&shuffle_steps(t, spec.shuffle_seed), &options.series))
                    .collect()
            } else {
                corpus
                    .iter()
                    .zip(&original)
                    .map(|(t, s)| shuffle_series(s, &t.id, spec.shuffle_seed))
                    .collect()
            };
            for stat in SHUFFLE_STATISTICS {
                let r = strength_report(corpus, &original, stat, &options.eval)?;
                rows.push(row(corpus, name, "original".into(), &r));
                let r = strength_report(corpus, &shuffled, stat, &options.eval)?;
                rows.push(row(corpus, name, "shuffled".into(), &r));
            }
        }
        ControlKind::BaselineEntropy | ControlKind::BaselineEntropyChange | ControlKind::BaselineDivergence => {
            let kind = match spec.kind {
                ControlKind::BaselineEntropy => BaselineKind::Entropy,
                ControlKind::BaselineEntropyChange => BaselineKind::EntropyChange,
                _ => BaselineKind::Divergence,
            };
            let series = series_all(corpus, &options.series);
            let scores: Vec<f64> = series
                .iter()
                .map(|s| baseline_statistic(s, kind, spec.baseline_window))
                .collect();
            let stat_name = match spec.baseline_window {
                Some(w) => format!("{}_{w}", kind.name()),
                None => kind.name().to_string(),
            };
            let r = evaluate_scores(&stat_name, corpus, &scores, &options.eval)?;
            let setting = spec
                .baseline_window
                .map_or_else(|| "all".to_string(), |w| format!("w={w}"));
            rows.push(row(corpus, name, setting, &r));
        }
        ControlKind::LambdaAblation => {
            for (l, r) in lambda_ablation(corpus, &spec.lambdas, options)? {
                rows.push(row(corpus, name, format!("lambda={l}"), &r));
            }
        }
        ControlKind::TopkSweep => {
            for (k, r) in topk_sweep(corpus, &spec.ks, options)? {
                rows.push(row(corpus, name, format!("k={k}"), &r));
            }
        }
        ControlKind::WindowSweep => {
            for (w, r) in window_sweep(corpus, &spec.windows, options)? {
                rows.push(row(corpus, name, format!("w={w}"), &r));
            }
        }
    }
    Ok(rows)
}

/// Long-format CSV of control rows.
pub fn write_control_csv<W: std::io::Write>(writer: W, rows: &[ControlRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<control csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::entropy;
    use crate::trace::{renormalize, Decoding, Label, StepRecord, TokenEntry};

    fn trace(id: &str, n_steps: usize) -> TraceRecord {
        TraceRecord {
            id: id.into(),
            dataset: "d".into(),
            model: "m".into(),
            decoding: Decoding::default(),
            steps: (0..n_steps)
                .map(|t| {
                    let spread = 0.2 + t as f64 * 0.3;
                    StepRecord::new(
                        (0..5u64)
                            .map(|j| TokenEntry::new(j + t as u64, -(j as f64) * spread - 0.01))
                            .collect(),
                    )
                })
                .collect(),
            label: Label {
                correct: true,
                predicted: "x".into(),
                reference: "x".into(),
            },
            output_text: None,
        }
    }

    #[test]
    fn shuffle_of_single_step_is_identity() {
        let t = trace("a", 1);
        assert_eq!(shuffle_steps(&t, 0), t);
    }

    #[test]
    fn shuffle_is_deterministic_and_keeps_entropy_multiset() {
        let t = trace("abc", 9);
        let s1 = shuffle_steps(&t, 3);
        assert_eq!(s1, shuffle_steps(&t, 3));
        assert_ne!(s1.steps, t.steps);
        let ent = |tr: &TraceRecord| {
            let mut v: Vec<f64> = tr.steps.iter().map(|s| entropy(&renormalize(s, 50).unwrap())).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(ent(&t), ent(&s1));
        assert_eq!(s1.label, t.label);
    }

    #[test]
    fn series_shuffle_preserves_max() {
        let t = trace("q", 12);
        let s = step_series(&t, &SeriesConfig::default());
        let sh = shuffle_series(&s, &t.id, 0);
        assert!(sh.stale_components);
        assert_eq!(
            window_max(&s.instability, usize::MAX),
            window_max(&sh.instability, usize::MAX)
        );
        let one = step_series(&trace("q", 1), &SeriesConfig::default());
        assert_eq!(shuffle_series(&one, "q", 0).instability, one.instability);
    }

    #[test]
    fn baseline_edge_cases() {
        let mut s = step_series(&trace("b", 1), &SeriesConfig::default());
        assert_eq!(baseline_statistic(&s, BaselineKind::EntropyChange, None), 0.0);
        s.entropy = vec![0.7; 5];
        s.divergence = vec![0.0; 5];
        s.instability = vec![0.7; 5];
        assert_eq!(baseline_statistic(&s, BaselineKind::EntropyChange, None), 0.0);
        assert_eq!(baseline_statistic(&s, BaselineKind::Divergence, None), 0.0);
        s.entropy[3] = 50f64.ln();
        assert_eq!(baseline_statistic(&s, BaselineKind::Entropy, None), 50f64.ln());
        assert_eq!(baseline_statistic(&s, BaselineKind::Entropy, Some(3)), 0.7);
    }

    #[test]
    fn spec_validation() {
        assert!(ControlSpec::new(ControlKind::TopkSweep).validate().is_err());
        assert!(ControlSpec::with_defaults(ControlKind::TopkSweep).validate().is_ok());
        assert!("bogus".parse::<ControlKind>().is_err());
        assert_eq!("shuffle_i".parse::<ControlKind>().unwrap(), ControlKind::ShuffleSeries);
    }

    #[test]
    fn statistic_names_parse() {
        assert_eq!("S".parse::<StrengthStatistic>().unwrap(), StrengthStatistic::Peak);
        assert_eq!("S_50".parse::<StrengthStatistic>().unwrap(), StrengthStatistic::Window(50));
        assert_eq!("S20".parse::<StrengthStatistic>().unwrap(), StrengthStatistic::Window(20));
        assert!("S_0".parse::<StrengthStatistic>().is_err());
    }
}
