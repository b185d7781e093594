//! Command implementations behind the `sentiscale` binary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use sentiscale::analytics::{self, alpha_for_window, CorrelationReport, CorrelationSettings};
use sentiscale::experiment::{self, ExperimentRow, ExperimentSpec, RunConfig, RunError};
use sentiscale::metrics::{self, RunMetrics, SummaryRecord};
use sentiscale::workload::{self, SyntheticSpec, WorkloadError};
use sentiscale::{engine, Execution};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        RunError::from(e).into()
    }
}

fn runtime(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

/// Settings shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct Globals {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
    pub execution: Execution,
}

impl Default for Globals {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            quiet: false,
            execution: Execution::available(),
        }
    }
}

impl Globals {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn read_config(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(&format!("cannot create {}", path.display()), e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(&format!("cannot create {}", dir.display()), e))
}

/// Writes a synthetic trace and its class manifest. `--out` names the trace
/// file when it ends in `.csv`, otherwise a directory that receives
/// `trace.csv`. `--seed` replaces the spec's `rng_seed`.
pub fn cmd_generate(spec_path: &Path, g: &Globals) -> Result<PathBuf, CliError> {
    let text = read_config(spec_path)?;
    let mut spec: SyntheticSpec =
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = g.seed {
        spec.rng_seed = seed;
    }
    let w = workload::generate_synthetic(&spec)?;
    let out = match &g.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => p.clone(),
        other => {
            let dir = other.clone().unwrap_or_else(|| PathBuf::from("."));
            dir.join("trace.csv")
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    workload::save_workload(&out, &w)?;
    g.say(format!(
        "wrote {} items to {}",
        w.items.len(),
        out.display()
    ));
    Ok(out)
}

/// Paths written by [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: PathBuf,
    pub events: PathBuf,
    pub completions: PathBuf,
    pub metrics: RunMetrics,
}

/// Runs one simulation and writes `summary.csv`, `events.log`,
/// `timeline.csv` and `completions.csv` (plus `latency_histogram.csv` when configured).
pub fn cmd_run(config_path: &Path, g: &Globals) -> Result<RunOutput, CliError> {
    let cfg = RunConfig::from_toml(&read_config(config_path)?)?;
    let policy = cfg.policy_spec()?;
    let seed = g.seed.or(cfg.seed).unwrap_or(1);
    let mut w = cfg.workload.load(&base_dir(config_path))?;
    if cfg.workload.resample_cycles.unwrap_or(false) {
        w = experiment::resampled(&w, seed);
    }
    let engine = experiment::run_engine(&cfg.sim, w, &policy, true)?;
    let m = metrics::finalize_engine(&engine, cfg.warmup_s);

    let dir = g.out_dir();
    ensure_dir(&dir)?;
    let run_id = format!("{}-seed{seed}", policy.name());
    let summary = dir.join("summary.csv");
    let record = SummaryRecord::new(run_id, policy.name(), &policy.params(), &m);
    metrics::write_summary(create(&summary)?, &[record]).map_err(|e| runtime("summary", e))?;
    let events = dir.join("events.log");
    engine::write_events(create(&events)?, engine.events().unwrap_or_default())
        .map_err(|e| runtime("event log", e))?;
    let timeline = dir.join("timeline.csv");
    engine::write_timeline(create(&timeline)?, engine.timeline())
        .map_err(|e| runtime("timeline", e))?;
    let completions = dir.join("completions.csv");
    experiment::write_completions(create(&completions)?, engine.completed())?;
    if let Some(bin) = cfg.output.histogram_bin_s {
        let path = dir.join("latency_histogram.csv");
        metrics::write_latency_histogram(create(&path)?, &m.latencies, bin)
            .map_err(|e| runtime("histogram", e))?;
    }
    if m.excluded_unfinished > 0 {
        log::warn!(
            "{} unfinished items within the SLA were left out of the violation fraction",
            m.excluded_unfinished
        );
    }
    g.say(format!(
        "{} {}: violation {:.4}%  cpu-hours {:.4}  completed {}",
        policy.name(),
        policy.params(),
        m.violation_pct(),
        m.cpu_hours,
        m.completed
    ));
    Ok(RunOutput {
        summary,
        events,
        completions,
        metrics: m,
    })
}

/// Runs the policy matrix and writes `results.csv` and `replications.csv`.
pub fn cmd_experiment(spec_path: &Path, g: &Globals) -> Result<Vec<ExperimentRow>, CliError> {
    let spec = ExperimentSpec::from_toml(&read_config(spec_path)?)?;
    let seed = g.seed.or(spec.seed).unwrap_or(1);
    let w = spec.workload.load(&base_dir(spec_path))?;
    let rows = experiment::run_experiment(&spec, &w, seed, g.execution)?;
    let dir = g.out_dir();
    ensure_dir(&dir)?;
    experiment::write_results(create(&dir.join("results.csv"))?, &rows)
        .map_err(|e| runtime("results", e))?;
    experiment::write_replications(create(&dir.join("replications.csv"))?, &rows)
        .map_err(|e| runtime("replications", e))?;
    for r in &rows {
        g.say(format!(
            "{:<9} {:<28} violation {:.4}% ± {:.4}  cpu-hours {:.3} ± {:.3}  reps {} ({})",
            r.policy.name(),
            r.policy.params(),
            r.violation.mean,
            r.violation.half_width,
            r.cost.mean,
            r.cost.half_width,
            r.outcomes.len(),
            r.stop_reason
        ));
    }
    Ok(rows)
}

/// Options for [`cmd_analyze`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub bucket_s: f64,
    pub max_lag: usize,
    pub ema_window: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        let d = CorrelationSettings::default();
        Self {
            bucket_s: d.bucket_width_s,
            max_lag: d.max_lag,
            ema_window: 1,
        }
    }
}

/// Correlates volume with sentiment for a trace file or a run directory
/// (its `completions.csv`), writing `correlation.csv` and `series.csv`.
pub fn cmd_analyze(
    input: &Path,
    opts: AnalyzeOptions,
    g: &Globals,
) -> Result<CorrelationReport, CliError> {
    if !input.exists() {
        return Err(CliError::Config(format!(
            "input {} does not exist",
            input.display()
        )));
    }
    let points: Vec<(f64, f64)> = if input.is_dir() {
        let path = input.join("completions.csv");
        let f = File::open(&path)
            .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
        experiment::read_completion_points(f)?
    } else {
        workload::load_trace(input, None)?
            .items
            .iter()
            .map(|i| (i.post_time, i.sentiment.score()))
            .collect()
    };
    if opts.ema_window == 0 {
        return Err(CliError::Config(
            "ema window must be at least 1 bucket".into(),
        ));
    }
    let settings = CorrelationSettings {
        bucket_width_s: opts.bucket_s,
        max_lag: opts.max_lag,
        ema_alpha: alpha_for_window(opts.ema_window),
    };
    let report = analytics::report_correlation(&points, &settings)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dir = g.out_dir();
    ensure_dir(&dir)?;
    report
        .write_lags(create(&dir.join("correlation.csv"))?)
        .map_err(|e| runtime("correlation", e))?;
    report
        .write_series(create(&dir.join("series.csv"))?)
        .map_err(|e| runtime("series", e))?;
    let r0 = report
        .lags
        .iter()
        .find(|(lag, _)| *lag == 0)
        .and_then(|(_, r)| *r);
    g.say(format!(
        "lag-0 r = {}  variation leads volume by {} bucket(s)",
        r0.map_or("n/a".into(), |r| format!("{r:.4}")),
        report
            .lead_buckets()
            .map_or("n/a".into(), |l| l.to_string())
    ));
    Ok(report)
}
