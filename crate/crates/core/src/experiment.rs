//! Run and experiment configuration, and the drivers that execute them.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, SimConfig};
use crate::metrics::{
    self, MetricsError, ReplicationConfig, ReplicationReport, RunMetrics, Selector, StopReason,
};
use crate::par::{self, Execution};
use crate::policies::{AppdataPolicyCfg, PolicyError, PolicySpec, ThresholdPolicyCfg};
use crate::workload::{self, ConversionContext, SyntheticSpec, WorkItem, Workload, WorkloadError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown policy {0:?} (expected threshold, load, appdata or fixed)")]
    UnknownPolicy(String),
    #[error("invalid {field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// True for failures caused by the configuration rather than by the
    /// environment.
    pub fn is_config(&self) -> bool {
        !matches!(
            self,
            RunError::Io(_)
                | RunError::Workload(WorkloadError::Io(_))
                | RunError::Metrics(MetricsError::Io(_) | MetricsError::Csv(_))
        )
    }
}

fn invalid(field: &'static str, msg: impl Into<String>) -> RunError {
    RunError::Invalid {
        field,
        msg: msg.into(),
    }
}

/// Where the items come from: a trace file or a synthetic spec.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSource {
    /// Relative paths resolve against the config file's directory.
    pub trace: Option<PathBuf>,
    /// Needed when the trace holds `delay_s` instead of `cycles`.
    pub conversion: Option<ConversionContext>,
    pub synthetic: Option<SyntheticSpec>,
    /// Draw fresh cycle demands from the class distributions using the run
    /// seed. Defaults to off for `run` and on for experiments.
    pub resample_cycles: Option<bool>,
}

impl WorkloadSource {
    pub fn load(&self, base_dir: &Path) -> Result<Workload, RunError> {
        match (&self.trace, &self.synthetic) {
            (Some(path), None) => {
                let path = if path.is_relative() {
                    base_dir.join(path)
                } else {
                    path.clone()
                };
                Ok(workload::load_trace(&path, self.conversion.as_ref())?)
            }
            (None, Some(spec)) => Ok(workload::generate_synthetic(spec)?),
            (Some(_), Some(_)) => Err(invalid(
                "workload",
                "give either trace or synthetic, not both",
            )),
            (None, None) => Err(invalid(
                "workload",
                "needs a trace path or a synthetic section",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadSection {
    pub quantile: f64,
}

impl Default for LoadSection {
    fn default() -> Self {
        Self { quantile: 0.99999 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write `latency_histogram.csv` with this bin width.
    pub histogram_bin_s: Option<f64>,
}

/// A single simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub sim: SimConfig,
    pub workload: WorkloadSource,
    pub policy: String,
    #[serde(default)]
    pub threshold: ThresholdPolicyCfg,
    #[serde(default)]
    pub load: LoadSection,
    #[serde(default)]
    pub appdata: AppdataPolicyCfg,
    /// Seconds excluded from L, λ and W.
    #[serde(default)]
    pub warmup_s: f64,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.sim.validate()?;
        self.policy_spec()?;
        if !(self.warmup_s >= 0.0) {
            return Err(invalid("warmup_s", "must be non-negative"));
        }
        if let Some(b) = self.output.histogram_bin_s {
            if !(b > 0.0) {
                return Err(invalid("output.histogram_bin_s", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn policy_spec(&self) -> Result<PolicySpec, RunError> {
        let spec = match self.policy.as_str() {
            "fixed" => PolicySpec::Fixed,
            "threshold" => {
                self.threshold.validate()?;
                PolicySpec::Threshold(self.threshold)
            }
            "load" => PolicySpec::Load {
                quantile: self.load.quantile,
            },
            "appdata" => {
                self.appdata.validate()?;
                PolicySpec::Appdata {
                    quantile: self.load.quantile,
                    cfg: self.appdata,
                }
            }
            other => return Err(RunError::UnknownPolicy(other.to_string())),
        };
        Ok(spec)
    }
}

/// Runs `workload` to completion (or the horizon) under `policy`.
pub fn run_engine(
    sim: &SimConfig,
    workload: Workload,
    policy: &PolicySpec,
    event_log: bool,
) -> Result<Engine, RunError> {
    let mut p = policy.build(&workload.classes)?;
    let mut engine = Engine::new(sim.clone(), workload)?;
    if event_log {
        engine = engine.with_event_log();
    }
    engine.run(p.as_mut());
    Ok(engine)
}

/// Copy of `workload` with cycle demands redrawn from `seed`.
pub fn resampled(workload: &Workload, seed: u64) -> Workload {
    let mut w = workload.clone();
    w.resample_cycles(&mut ChaCha8Rng::seed_from_u64(seed));
    w
}

/// Which metric drives the replication stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMetric {
    #[default]
    Violation,
    Cost,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdMatrix {
    pub upper: Vec<f64>,
    pub lower: f64,
}

impl Default for ThresholdMatrix {
    fn default() -> Self {
        Self {
            upper: Vec::new(),
            lower: ThresholdPolicyCfg::default().lower,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadMatrix {
    pub quantile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppdataMatrix {
    pub extra_cpus: Vec<u32>,
    pub load_quantile: f64,
    pub window_s: f64,
    pub jump_threshold: f64,
    pub cooldown_s: Option<f64>,
}

impl Default for AppdataMatrix {
    fn default() -> Self {
        let d = AppdataPolicyCfg::default();
        Self {
            extra_cpus: Vec::new(),
            load_quantile: LoadSection::default().quantile,
            window_s: d.window_s,
            jump_threshold: d.jump_threshold,
            cooldown_s: d.cooldown_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyMatrix {
    pub fixed: bool,
    pub threshold: Option<ThresholdMatrix>,
    pub load: Option<LoadMatrix>,
    pub appdata: Option<AppdataMatrix>,
}

impl PolicyMatrix {
    /// Every policy/parameter combination, in a fixed order.
    pub fn combos(&self) -> Vec<PolicySpec> {
        let mut out = Vec::new();
        if self.fixed {
            out.push(PolicySpec::Fixed);
        }
        if let Some(t) = &self.threshold {
            out.extend(t.upper.iter().map(|&upper| {
                PolicySpec::Threshold(ThresholdPolicyCfg {
                    upper,
                    lower: t.lower,
                })
            }));
        }
        if let Some(l) = &self.load {
            out.extend(
                l.quantile
                    .iter()
                    .map(|&quantile| PolicySpec::Load { quantile }),
            );
        }
        if let Some(a) = &self.appdata {
            out.extend(a.extra_cpus.iter().map(|&k| PolicySpec::Appdata {
                quantile: a.load_quantile,
                cfg: AppdataPolicyCfg {
                    window_s: a.window_s,
                    jump_threshold: a.jump_threshold,
                    extra_cpus: k,
                    cooldown_s: a.cooldown_s,
                },
            }));
        }
        out
    }
}

/// A policy sweep with replication control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: Option<u64>,
    #[serde(default)]
    pub sim: SimConfig,
    pub workload: WorkloadSource,
    pub matrix: PolicyMatrix,
    #[serde(default)]
    pub replication: ReplicationConfig,
    #[serde(default)]
    pub ci_metric: CiMetric,
    #[serde(default)]
    pub warmup_s: f64,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.sim.validate()?;
        self.replication.validate()?;
        let combos = self.matrix.combos();
        if combos.is_empty() {
            return Err(invalid("matrix", "needs at least one policy combination"));
        }
        for c in &combos {
            match c {
                PolicySpec::Threshold(t) => t.validate()?,
                PolicySpec::Appdata { cfg, .. } => cfg.validate()?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// Headline numbers from one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub seed: u64,
    pub violation_pct: f64,
    pub cpu_hours: f64,
    pub l: f64,
    pub lambda: f64,
    pub w: f64,
}

impl Outcome {
    pub fn from_metrics(seed: u64, m: &RunMetrics) -> Self {
        Self {
            seed,
            violation_pct: m.violation_pct(),
            cpu_hours: m.cpu_hours,
            l: m.mean_in_system,
            lambda: m.arrival_rate,
            w: m.mean_latency,
        }
    }
}

/// Aggregated result for one policy/parameter combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub policy: PolicySpec,
    pub violation: ReplicationReport,
    pub cost: ReplicationReport,
    pub outcomes: Vec<Outcome>,
    pub stop_reason: StopReason,
}

/// Runs one replication of `policy`.
pub fn replication_outcome(
    sim: &SimConfig,
    workload: &Workload,
    policy: &PolicySpec,
    seed: u64,
    resample: bool,
    warmup_s: f64,
) -> Result<Outcome, RunError> {
    let w = if resample {
        resampled(workload, seed)
    } else {
        workload.clone()
    };
    let engine = run_engine(sim, w, policy, false)?;
    Ok(Outcome::from_metrics(
        seed,
        &metrics::finalize_engine(&engine, warmup_s),
    ))
}

/// Replicates every combination of the matrix against a fixed workload.
/// All combinations share the same replication seeds.
pub fn run_experiment(
    spec: &ExperimentSpec,
    workload: &Workload,
    master_seed: u64,
    execution: Execution,
) -> Result<Vec<ExperimentRow>, RunError> {
    spec.validate()?;
    let resample = spec.workload.resample_cycles.unwrap_or(true);
    let combos = spec.matrix.combos();
    for c in &combos {
        c.build(&workload.classes)?;
    }
    let rep_cfg = ReplicationConfig {
        execution,
        ..spec.replication.clone()
    };
    let rows = par::map(execution, combos, |policy| {
        let run = |seed: u64| {
            replication_outcome(&spec.sim, workload, &policy, seed, resample, spec.warmup_s)
        };
        let violation =
            |o: &Result<Outcome, RunError>| o.as_ref().map_or(f64::NAN, |o| o.violation_pct);
        let cost = |o: &Result<Outcome, RunError>| o.as_ref().map_or(f64::NAN, |o| o.cpu_hours);
        let selectors: Vec<Selector<'_, Result<Outcome, RunError>>> = match spec.ci_metric {
            CiMetric::Violation => vec![&violation],
            CiMetric::Cost => vec![&cost],
            CiMetric::Both => vec![&violation, &cost],
        };
        let (outs, reports) = metrics::replicate_runs(&rep_cfg, master_seed, run, &selectors)?;
        let outcomes = outs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let stop_reason = reports
            .iter()
            .map(|r| r.stop_reason)
            .find(|&r| r == StopReason::MaxReplications)
            .unwrap_or(reports[0].stop_reason);
        let summarize = |f: fn(&Outcome) -> f64| {
            let values: Vec<f64> = outcomes.iter().map(f).collect();
            let ci = metrics::Interval::of(&values, rep_cfg.confidence);
            ReplicationReport {
                mean: ci.mean,
                half_width: ci.half_width,
                replications: values.len(),
                stop_reason,
                values,
            }
        };
        Ok(ExperimentRow {
            violation: summarize(|o| o.violation_pct),
            cost: summarize(|o| o.cpu_hours),
            policy,
            outcomes,
            stop_reason,
        })
    });
    rows.into_iter().collect()
}

/// Writes one row per combination with mean and CI half-width.
pub fn write_results<W: Write>(mut w: W, rows: &[ExperimentRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "policy,params,replications,stop_reason,violation_pct_mean,violation_pct_ci,cpu_hours_mean,cpu_hours_ci"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.policy.name(),
            r.policy.params(),
            r.outcomes.len(),
            r.stop_reason,
            r.violation.mean,
            r.violation.half_width,
            r.cost.mean,
            r.cost.half_width
        )?;
    }
    Ok(())
}

/// Writes every replication's headline numbers.
pub fn write_replications<W: Write>(mut w: W, rows: &[ExperimentRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "policy,params,rep,seed,violation_pct,cpu_hours,L,lambda,W"
    )?;
    for r in rows {
        for (i, o) in r.outcomes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.policy.name(),
                r.policy.params(),
                i,
                o.seed,
                o.violation_pct,
                o.cpu_hours,
                o.l,
                o.lambda,
                o.w
            )?;
        }
    }
    Ok(())
}

/// Writes `id,post_time_s,class_id,score,completion_time_s` for completed
/// items.
pub fn write_completions<W: Write>(w: W, items: &[WorkItem]) -> Result<(), RunError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "id",
        "post_time_s",
        "class_id",
        "score",
        "completion_time_s",
    ])
    .map_err(MetricsError::from)?;
    for it in items {
        out.write_record([
            it.id.to_string(),
            it.post_time.to_string(),
            it.class_id.to_string(),
            it.sentiment.score().to_string(),
            it.completion_time
                .map(|t| t.to_string())
                .unwrap_or_default(),
        ])
        .map_err(MetricsError::from)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CompletionRow {
    post_time_s: f64,
    score: f64,
}

/// Reads `(post_time_s, score)` pairs back from a completions file.
pub fn read_completion_points<R: std::io::Read>(r: R) -> Result<Vec<(f64, f64)>, RunError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<CompletionRow>()
        .map(|row| {
            let row = row.map_err(MetricsError::from)?;
            Ok((row.post_time_s, row.score))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUN: &str = r#"
        seed = 3
        policy = "threshold"
        [sim]
        starting_cpus = 2
        [workload.synthetic]
        duration_s = 120
        base_rate = 2
        [threshold]
        upper = 0.8
    "#;

    #[test]
    fn parse_run_config() {
        let cfg = RunConfig::from_toml(RUN).unwrap();
        assert_eq!(cfg.sim.starting_cpus, 2);
        assert_eq!(cfg.sim.sla_s, 300.0);
        assert_eq!(cfg.policy_spec().unwrap().params(), "upper=0.8;lower=0.5");
    }

    #[test]
    fn unknown_policy_is_config_error() {
        let text = RUN.replace("\"threshold\"", "\"magic\"");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, RunError::UnknownPolicy(_)));
        assert!(err.is_config());
    }

    #[test]
    fn matrix_cardinality() {
        let spec = ExperimentSpec::from_toml(
            r#"
            [workload.synthetic]
            duration_s = 60
            [matrix.threshold]
            upper = [0.6, 0.9]
            [matrix.load]
            quantile = [0.9, 0.99]
            "#,
        )
        .unwrap();
        assert_eq!(spec.matrix.combos().len(), 4);
    }

    #[test]
    fn empty_matrix_rejected() {
        let err = ExperimentSpec::from_toml("[workload.synthetic]\n[matrix]\n").unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn experiment_rows_are_reproducible() {
        let spec = ExperimentSpec::from_toml(
            r#"
            [workload.synthetic]
            duration_s = 300
            base_rate = 3
            [matrix.threshold]
            upper = [0.6, 0.9]
            [replication]
            max_reps = 6
            "#,
        )
        .unwrap();
        let w = spec.workload.load(Path::new(".")).unwrap();
        let a = run_experiment(&spec, &w, 9, Execution::Parallel).unwrap();
        let b = run_experiment(&spec, &w, 9, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }
}
