use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use instab::controls::{ControlKind, ControlSpec};
use instab::pipeline::{self, ConfigFile, RunConfig, Thresholds, DEFAULT_OUT_DIR, OUT_DIR_ENV};
use instab::synth::SynthConfig;
use instab::{Error, Result};

#[derive(Parser)]
#[command(name = "instab", version, about = "Instability diagnostics for logged decoding traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-trace diagnostics, corpus metrics and quantile buckets.
    Analyze(Common),
    /// Negative controls, baselines and sweeps.
    Controls {
        #[command(flatten)]
        common: Common,
        /// shuffle_p, shuffle_i, baseline_SH, baseline_SdH, baseline_SD,
        /// lambda_ablation, topk_sweep or window_sweep
        #[arg(long)]
        kind: ControlKind,
        /// Lambda grid for lambda_ablation.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// k grid for topk_sweep.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        shuffle_seed: Option<u64>,
    },
    /// Peak-timing classes, threshold sweep, rho bins and failure modes.
    Timing {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = instab::timing::DEFAULT_EARLY)]
        early: f64,
        #[arg(long, default_value_t = instab::timing::DEFAULT_LATE)]
        late: f64,
        #[arg(long, default_value_t = instab::timing::DEFAULT_RHO_BINS)]
        rho_bins: usize,
    },
    /// Generate a synthetic corpus with a population sidecar.
    Synth {
        /// two-population, null, timing, failure-modes, saturated-jsd or flat
        #[arg(long, default_value = "two-population")]
        preset: String,
        /// JSON file with a full generator configuration; overrides --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Randomized certification of the divergence lower bounds.
    Verify {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [3, 10, 50])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// analyze, timing and every control in one output directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Trace JSONL file; repeatable.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Effective top-k; defaults to the logged list length.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    bootstrap_n: Option<usize>,
    #[arg(long)]
    bootstrap_seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    emit_series: bool,
    #[arg(long)]
    probe_top_m: Option<usize>,
    /// S or S_<w>.
    #[arg(long)]
    statistic: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Also compute the curvature proxy per step.
    #[arg(long)]
    kappa: bool,
}

impl Common {
    fn into_config(self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            ConfigFile::load(path)?.apply(&mut config);
        }
        config.inputs = self.input;
        if let Some(v) = self.out {
            config.out_dir = v;
        }
        if let Some(v) = self.lambda {
            config.lambda = v;
        }
        if self.k.is_some() {
            config.effective_k = self.k;
        }
        if let Some(v) = self.windows {
            config.windows = v;
        }
        if let Some(v) = self.buckets {
            config.buckets = v;
        }
        if let Some(v) = self.bootstrap_n {
            config.bootstrap.resamples = v;
        }
        if let Some(v) = self.bootstrap_seed {
            config.bootstrap.seed = v;
        }
        if self.jobs.is_some() {
            config.jobs = self.jobs;
        }
        config.emit_series |= self.emit_series;
        config.with_kappa |= self.kappa;
        if let Some(v) = self.probe_top_m {
            config.probe_top_m = v;
        }
        if let Some(v) = self.statistic {
            config.statistic = v;
        }
        if self.max_steps.is_some() {
            config.max_steps = self.max_steps;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Analyze(common) => {
            let config = common.into_config()?;
            let out = pipeline::cmd_analyze(&config)?;
            println!("analyzed {} traces into {}", out.report.n, config.out_dir.display());
        }
        Command::Controls { common, kind, lambdas, ks, shuffle_seed } => {
            let config = common.into_config()?;
            let mut spec = ControlSpec::with_defaults(kind);
            spec.windows = config.windows.clone();
            if let Some(v) = lambdas {
                spec.lambdas = v;
            }
            if let Some(v) = ks {
                spec.ks = v;
            }
            if let Some(v) = shuffle_seed {
                spec.shuffle_seed = v;
            }
            spec.validate()?;
            let rows = pipeline::cmd_controls(&config, &spec)?;
            println!("{kind}: {} rows into {}", rows.len(), config.out_dir.display());
        }
        Command::Timing { common, early, late, rho_bins } => {
            let config = common.into_config()?;
            pipeline::cmd_timing(&config, Thresholds { early, late, rho_bins })?;
            println!("timing (early {early}, late {late}) into {}", config.out_dir.display());
        }
        Command::Synth { preset, config, n, seed, out, jobs } => {
            let synth = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => SynthConfig::preset(&preset, n, seed)?,
            };
            let sidecar = pipeline::cmd_synth(&synth, &out, jobs)?;
            println!("wrote {} traces to {} ({})", synth.n_traces, out.display(), sidecar.display());
        }
        Command::Verify { trials, dims, seed, out, jobs } => {
            let report = pipeline::cmd_verify(trials, &dims, seed, &out, jobs)?;
            println!("{}", report.summary_line());
            if report.violations > 0 {
                return Err(Error::Undefined(format!("{} bound violations", report.violations)));
            }
        }
        Command::Report(common) => {
            let config = common.into_config()?;
            pipeline::cmd_report(&config, Thresholds::default())?;
            println!("report into {}", config.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
