//! Run configuration and the file-producing commands behind the `instab` binary.
//!
//! Every command writes into an output directory and echoes the effective
//! configuration (minus the output directory and worker count, which do not
//! affect results) into its JSON outputs. Outputs are byte-identical for
//! identical inputs and configuration, whatever the worker count.
//!
//! | command    | files                                                                    |
//! |------------|--------------------------------------------------------------------------|
//! | `analyze`  | `diagnostics.jsonl`, `eval_report.json`, `buckets.csv`                    |
//! | `controls` | `controls_<kind>.csv`, `controls_<kind>.json`                             |
//! | `timing`   | `timing_report.json`, `peak_classes.csv`, `threshold_sweep.csv`, `rho_bins.csv` |
//! | `synth`    | `<name>.jsonl`, `<name>.population.jsonl`                                  |
//! | `verify`   | `verify_report.json`                                                      |
//! | `report`   | all of `analyze`, `timing` and every control                              |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controls::{diagnose, run_control, write_control_csv, AnalysisOptions, ControlKind, ControlRow, ControlSpec, StrengthStatistic};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, write_bucket_csv, BootstrapConfig, EvalOptions, EvalReport, DEFAULT_BUCKETS};
use crate::signal::{SeriesConfig, SummaryConfig, TraceDiagnostics, DEFAULT_LAMBDA, DEFAULT_PROBE_TOP_M, DEFAULT_WINDOWS};
use crate::synth::{generate, write_sidecar, SynthConfig};
use crate::theory::{verify_lemma_jsd, verify_pinsker_chain, LemmaReport, PinskerReport};
use crate::timing::{timing_report, PeakScheme, TimingReport, DEFAULT_EARLY, DEFAULT_LATE, DEFAULT_RHO_BINS};
use crate::trace::{parse_trace_file_with, write_trace_file, ParseOptions, TraceRecord, DEFAULT_MAX_STEPS};

/// Environment variable consulted for the default output directory.
pub const OUT_DIR_ENV: &str = "INSTAB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "instab-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub lambda: f64,
    /// `None` uses each step's full logged list.
    pub effective_k: Option<usize>,
    pub windows: Vec<usize>,
    pub buckets: usize,
    pub bootstrap: BootstrapConfig,
    #[serde(skip)]
    pub jobs: Option<usize>,
    pub emit_series: bool,
    pub probe_top_m: usize,
    /// Strength statistic evaluated by `analyze`: `S` or `S_<w>`.
    pub statistic: String,
    pub max_steps: Option<usize>,
    pub with_kappa: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            lambda: DEFAULT_LAMBDA,
            effective_k: None,
            windows: DEFAULT_WINDOWS.to_vec(),
            buckets: DEFAULT_BUCKETS,
            bootstrap: BootstrapConfig::default(),
            jobs: None,
            emit_series: false,
            probe_top_m: DEFAULT_PROBE_TOP_M,
            statistic: "S".into(),
            max_steps: Some(DEFAULT_MAX_STEPS),
            with_kappa: false,
        }
    }
}

/// Optional settings read from a TOML config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub inputs: Option<Vec<PathBuf>>,
    pub out_dir: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub effective_k: Option<usize>,
    pub windows: Option<Vec<usize>>,
    pub buckets: Option<usize>,
    pub bootstrap_resamples: Option<usize>,
    pub bootstrap_level: Option<f64>,
    pub bootstrap_seed: Option<u64>,
    pub jobs: Option<usize>,
    pub emit_series: Option<bool>,
    pub probe_top_m: Option<usize>,
    pub statistic: Option<String>,
    pub max_steps: Option<usize>,
    pub with_kappa: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Overlays every setting present in the file onto `config`.
    pub fn apply(self, config: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            inputs => config.inputs,
            out_dir => config.out_dir,
            lambda => config.lambda,
            windows => config.windows,
            buckets => config.buckets,
            bootstrap_resamples => config.bootstrap.resamples,
            bootstrap_level => config.bootstrap.level,
            bootstrap_seed => config.bootstrap.seed,
            emit_series => config.emit_series,
            probe_top_m => config.probe_top_m,
            statistic => config.statistic,
            with_kappa => config.with_kappa,
        }
        if self.effective_k.is_some() {
            config.effective_k = self.effective_k;
        }
        if self.jobs.is_some() {
            config.jobs = self.jobs;
        }
        if self.max_steps.is_some() {
            config.max_steps = self.max_steps;
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and >= 0");
        }
        if self.effective_k == Some(0) {
            return bad("k must be >= 1");
        }
        if self.windows.contains(&0) {
            return bad("windows must be >= 1");
        }
        if self.buckets == 0 {
            return bad("buckets must be >= 1");
        }
        if self.probe_top_m == 0 {
            return bad("probe-top-m must be >= 1");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be >= 1");
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return bad("bootstrap level must lie in (0, 1)");
        }
        self.strength_statistic()?;
        Ok(())
    }

    pub fn strength_statistic(&self) -> Result<StrengthStatistic> {
        self.statistic.parse()
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            series: SeriesConfig {
                lambda: self.lambda,
                effective_k: self.effective_k,
                with_kappa: self.with_kappa,
                epsilon: 0.0,
            },
            summary: SummaryConfig {
                windows: self.windows.clone(),
                probe_top_m: self.probe_top_m,
            },
            eval: EvalOptions {
                n_buckets: self.buckets,
                bootstrap: (self.bootstrap.resamples > 0).then_some(self.bootstrap),
            },
        }
    }

    fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            max_steps: self.max_steps,
        }
    }
}

/// Runs `f` on a pool of `jobs` workers, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Reads every input file in order; ids must be unique across files.
pub fn load_corpus(config: &RunConfig) -> Result<Vec<TraceRecord>> {
    let mut corpus = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for path in &config.inputs {
        for trace in parse_trace_file_with(path, config.parse_options())? {
            if !seen.insert(trace.id.clone()) {
                return Err(Error::DuplicateId { id: trace.id, line: 0 });
            }
            corpus.push(trace);
        }
    }
    Ok(corpus)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Echoed<'a, T> {
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOutput {
    pub diagnostics: Vec<TraceDiagnostics>,
    pub report: EvalReport,
}

/// Per-trace diagnostics and the corpus report, without touching the filesystem.
pub fn analyze_corpus(corpus: &[TraceRecord], config: &RunConfig) -> Result<AnalyzeOutput> {
    config.validate()?;
    let options = config.analysis_options();
    let statistic = config.strength_statistic()?;
    with_jobs(config.jobs, || {
        let pairs = diagnose(corpus, &options.series, &options.summary);
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| statistic.of_series(s)).collect();
        let correct: Vec<bool> = corpus.iter().map(TraceRecord::correct).collect();
        let ids: Vec<&str> = corpus.iter().map(|t| t.id.as_str()).collect();
        let report = evaluate(&statistic.name(), &scores, &correct, &ids, &options.eval)?;
        let diagnostics = pairs
            .into_iter()
            .map(|(s, mut d)| {
                if config.emit_series {
                    d.series = Some(s);
                }
                d
            })
            .collect();
        Ok(AnalyzeOutput { diagnostics, report })
    })?
}

pub fn write_diagnostics(path: &Path, diagnostics: &[TraceDiagnostics]) -> Result<()> {
    let mut w = create(path)?;
    for d in diagnostics {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ReportBody<'a> {
    report: &'a EvalReport,
}

pub fn cmd_analyze(config: &RunConfig) -> Result<AnalyzeOutput> {
    let corpus = load_corpus(config)?;
    let out = analyze_corpus(&corpus, config)?;
    let dir = &config.out_dir;
    create_dir(dir)?;
    write_diagnostics(&dir.join("diagnostics.jsonl"), &out.diagnostics)?;
    write_json(
        &dir.join("eval_report.json"),
        &Echoed {
            config,
            body: ReportBody { report: &out.report },
        },
    )?;
    write_bucket_csv(create(&dir.join("buckets.csv"))?, &out.report.buckets)?;
    Ok(out)
}

#[derive(Serialize)]
struct ControlBody<'a> {
    control: &'a ControlSpec,
    rows: &'a [ControlRow],
}

pub fn run_controls(corpus: &[TraceRecord], config: &RunConfig, spec: &ControlSpec) -> Result<Vec<ControlRow>> {
    config.validate()?;
    let options = config.analysis_options();
    with_jobs(config.jobs, || run_control(corpus, spec, &options))?
}

pub fn cmd_controls(config: &RunConfig, spec: &ControlSpec) -> Result<Vec<ControlRow>> {
    let corpus = load_corpus(config)?;
    let rows = run_controls(&corpus, config, spec)?;
    write_control_outputs(config, spec, &rows)?;
    Ok(rows)
}

fn write_control_outputs(config: &RunConfig, spec: &ControlSpec, rows: &[ControlRow]) -> Result<()> {
    let dir = &config.out_dir;
    create_dir(dir)?;
    let stem = format!("controls_{}", spec.kind.name());
    write_control_csv(create(&dir.join(format!("{stem}.csv")))?, rows)?;
    write_json(
        &dir.join(format!("{stem}.json")),
        &Echoed {
            config,
            body: ControlBody { control: spec, rows },
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub early: f64,
    pub late: f64,
    pub rho_bins: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            early: DEFAULT_EARLY,
            late: DEFAULT_LATE,
            rho_bins: DEFAULT_RHO_BINS,
        }
    }
}

#[derive(Serialize)]
struct TimingBody<'a> {
    thresholds: Thresholds,
    timing: &'a TimingReport,
}

#[derive(Serialize)]
struct ClassCsvRow {
    scheme: PeakScheme,
    class: String,
    n: usize,
    share: f64,
    accuracy: Option<f64>,
}

pub fn cmd_timing(config: &RunConfig, thresholds: Thresholds) -> Result<TimingReport> {
    let corpus = load_corpus(config)?;
    let analysis = analyze_corpus(&corpus, &RunConfig { bootstrap: BootstrapConfig { resamples: 0, ..config.bootstrap }, ..config.clone() })?;
    let report = timing_report(&analysis.diagnostics, thresholds.early, thresholds.late, thresholds.rho_bins)?;
    write_timing_outputs(config, thresholds, &report)?;
    Ok(report)
}

fn write_timing_outputs(config: &RunConfig, thresholds: Thresholds, report: &TimingReport) -> Result<()> {
    let dir = &config.out_dir;
    create_dir(dir)?;
    write_json(
        &dir.join("timing_report.json"),
        &Echoed {
            config,
            body: TimingBody {
                thresholds,
                timing: report,
            },
        },
    )?;
    let classes: Vec<ClassCsvRow> = [&report.rho, &report.rho_50]
        .into_iter()
        .flat_map(|c| {
            c.class_table.iter().map(move |r| ClassCsvRow {
                scheme: c.scheme,
                class: r.class.to_string(),
                n: r.n,
                share: r.share,
                accuracy: r.accuracy,
            })
        })
        .collect();
    write_csv_rows(&dir.join("peak_classes.csv"), &classes)?;
    write_csv_rows(&dir.join("threshold_sweep.csv"), &report.sweep)?;
    write_csv_rows(&dir.join("rho_bins.csv"), &report.rho_bins)
}

/// Analysis, timing and every control with its standard grid.
pub fn cmd_report(config: &RunConfig, thresholds: Thresholds) -> Result<()> {
    let corpus = load_corpus(config)?;
    let out = analyze_corpus(&corpus, config)?;
    let dir = &config.out_dir;
    create_dir(dir)?;
    write_diagnostics(&dir.join("diagnostics.jsonl"), &out.diagnostics)?;
    write_json(
        &dir.join("eval_report.json"),
        &Echoed {
            config,
            body: ReportBody { report: &out.report },
        },
    )?;
    write_bucket_csv(create(&dir.join("buckets.csv"))?, &out.report.buckets)?;
    let timing = timing_report(&out.diagnostics, thresholds.early, thresholds.late, thresholds.rho_bins)?;
    write_timing_outputs(config, thresholds, &timing)?;
    for kind in ControlKind::ALL {
        let spec = ControlSpec::with_defaults(kind);
        let rows = run_controls(&corpus, config, &spec)?;
        write_control_outputs(config, &spec, &rows)?;
    }
    Ok(())
}

/// Writes `<out>` and its provenance sidecar `<out stem>.population.jsonl`.
pub fn cmd_synth(config: &SynthConfig, out: &Path, jobs: Option<usize>) -> Result<PathBuf> {
    let corpus = with_jobs(jobs, || generate(config))??;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_trace_file(out, &corpus.traces)?;
    let sidecar = sidecar_path(out);
    write_sidecar(&sidecar, &corpus.provenance)?;
    Ok(sidecar)
}

pub fn sidecar_path(trace_file: &Path) -> PathBuf {
    let stem = trace_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "traces".into());
    trace_file.with_file_name(format!("{stem}.population.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub lemma: Vec<LemmaReport>,
    pub pinsker: Vec<PinskerReport>,
    pub violations: usize,
}

impl VerifyReport {
    pub fn summary_line(&self) -> String {
        format!(
            "verify: {} violations ({} logit-bound runs, {} Pinsker runs)",
            self.violations,
            self.lemma.len(),
            self.pinsker.len()
        )
    }
}

pub fn run_verify(trials: usize, dims: &[usize], seed: u64, jobs: Option<usize>) -> Result<VerifyReport> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("at least one dimension is required".into()));
    }
    with_jobs(jobs, || {
        let lemma = dims
            .iter()
            .map(|&d| verify_lemma_jsd(trials, d, seed))
            .collect::<Result<Vec<_>>>()?;
        let pinsker = dims
            .iter()
            .map(|&d| verify_pinsker_chain(trials, d, seed))
            .collect::<Result<Vec<_>>>()?;
        let violations = lemma.iter().map(|r| r.violations).sum::<usize>()
            + pinsker.iter().map(PinskerReport::violations).sum::<usize>();
        Ok(VerifyReport {
            lemma,
            pinsker,
            violations,
        })
    })?
}

pub fn cmd_verify(trials: usize, dims: &[usize], seed: u64, out_dir: &Path, jobs: Option<usize>) -> Result<VerifyReport> {
    let report = run_verify(trials, dims, seed, jobs)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join("verify_report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.windows, [10, 20, 50, 100]);
        assert_eq!(c.buckets, 5);
        assert_eq!((c.bootstrap.resamples, c.bootstrap.level), (1000, 0.95));
        assert_eq!(c.probe_top_m, 10);
        assert_eq!(c.max_steps, Some(128));
    }

    #[test]
    fn config_file_overrides_defaults() {
        let file: ConfigFile = toml::from_str("lambda = 0.0\nwindows = [5]\nbootstrap_seed = 9\n").unwrap();
        let mut c = RunConfig::default();
        file.apply(&mut c);
        assert_eq!(c.lambda, 0.0);
        assert_eq!(c.windows, [5]);
        assert_eq!(c.bootstrap.seed, 9);
        assert_eq!(c.buckets, 5);
        assert!(toml::from_str::<ConfigFile>("bogus = 1").is_err());
    }

    #[test]
    fn invalid_settings_are_usage_errors() {
        let c = RunConfig { statistic: "Q".into(), ..Default::default() };
        assert!(c.validate().unwrap_err().is_usage());
        let c = RunConfig { effective_k: Some(0), ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("a/b/x.jsonl")), PathBuf::from("a/b/x.population.jsonl"));
    }
}
