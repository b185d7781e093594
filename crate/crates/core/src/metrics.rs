//! Quality and cost accounting, plus the replication stopping rule.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::engine::{Engine, StepRecord};
use crate::par::{self, Execution};
use crate::workload::WorkItem;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid {field}: {msg}")]
    Config { field: &'static str, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bad(field: &'static str, msg: impl Into<String>) -> MetricsError {
    MetricsError::Config {
        field,
        msg: msg.into(),
    }
}

/// Inputs to [`finalize`] besides the item logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureSettings {
    pub sla_s: f64,
    pub step_s: f64,
    /// L, λ and W ignore the first `warmup_s` seconds.
    pub warmup_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Latency of every completed item, in completion order.
    pub latencies: Vec<f64>,
    pub completed: usize,
    pub late_completed: usize,
    /// Unfinished items already past the SLA when the run stopped.
    pub late_unfinished: usize,
    /// Unfinished items still within the SLA; left out of the fraction.
    pub excluded_unfinished: usize,
    pub sla_violation_fraction: f64,
    pub cpu_hours: f64,
    /// Time-average number of items in the system.
    pub mean_in_system: f64,
    pub arrival_rate: f64,
    pub mean_latency: f64,
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub active_cpus: Vec<u32>,
    pub usage: Vec<f64>,
    pub queue_len: Vec<usize>,
}

impl RunMetrics {
    pub fn violation_pct(&self) -> f64 {
        100.0 * self.sla_violation_fraction
    }

    /// |L − λW| / (λW).
    pub fn littles_law_gap(&self) -> f64 {
        let lw = self.arrival_rate * self.mean_latency;
        (self.mean_in_system - lw).abs() / lw
    }
}

/// Computes run metrics from the completed and unfinished items and the
/// per-step timeline.
pub fn finalize<'a>(
    completed: &[WorkItem],
    unfinished: impl IntoIterator<Item = &'a WorkItem>,
    timeline: &[StepRecord],
    settings: MeasureSettings,
) -> RunMetrics {
    let unfinished: Vec<&WorkItem> = unfinished.into_iter().collect();
    let (start, end) = match (timeline.first(), timeline.last()) {
        (Some(a), Some(b)) => (a.clock_s, b.clock_s + settings.step_s),
        _ => (0.0, 0.0),
    };
    let sla = settings.sla_s;

    let latencies: Vec<f64> = completed
        .iter()
        .map(|i| {
            i.latency()
                .expect("completed items carry a completion time")
        })
        .collect();
    let late_completed = latencies.iter().filter(|&&l| l > sla).count();
    let late_unfinished = unfinished
        .iter()
        .filter(|i| end - i.post_time > sla)
        .count();
    let excluded_unfinished = unfinished.len() - late_unfinished;
    let counted = completed.len() + late_unfinished;
    let sla_violation_fraction = if counted > 0 {
        (late_completed + late_unfinished) as f64 / counted as f64
    } else if excluded_unfinished > 0 {
        1.0
    } else {
        0.0
    };

    let cpu_hours = timeline
        .iter()
        .map(|r| settings.step_s * r.active_cpus as f64)
        .sum::<f64>()
        / 3600.0;

    let ws = (start + settings.warmup_s).min(end);
    let span = end - ws;
    let overlap = |from: f64, to: f64| (to.min(end) - from.max(ws)).max(0.0);
    let area: f64 = completed
        .iter()
        .map(|i| overlap(i.post_time, i.completion_time.unwrap_or(end)))
        .chain(unfinished.iter().map(|i| overlap(i.post_time, end)))
        .sum();
    let in_window = |t: f64| t >= ws && t < end;
    let arrivals = completed
        .iter()
        .chain(unfinished.iter().copied())
        .filter(|i| in_window(i.post_time))
        .count();
    let window_latencies: Vec<f64> = completed
        .iter()
        .filter(|i| in_window(i.post_time))
        .filter_map(WorkItem::latency)
        .collect();
    let (mean_in_system, arrival_rate) = if span > 0.0 {
        (area / span, arrivals as f64 / span)
    } else {
        (0.0, 0.0)
    };
    let mean_latency = if window_latencies.is_empty() {
        0.0
    } else {
        window_latencies.iter().sum::<f64>() / window_latencies.len() as f64
    };

    RunMetrics {
        completed: completed.len(),
        late_completed,
        late_unfinished,
        excluded_unfinished,
        sla_violation_fraction,
        cpu_hours,
        mean_in_system,
        arrival_rate,
        mean_latency,
        window_start_s: ws,
        window_end_s: end,
        active_cpus: timeline.iter().map(|r| r.active_cpus).collect(),
        usage: timeline
            .iter()
            .map(|r| {
                if r.usage.cycles_available > 0.0 {
                    r.usage.cycles_consumed / r.usage.cycles_available
                } else {
                    0.0
                }
            })
            .collect(),
        queue_len: timeline.iter().map(|r| r.queue_len).collect(),
        latencies,
    }
}

/// [`finalize`] applied to a finished engine.
pub fn finalize_engine(engine: &Engine, warmup_s: f64) -> RunMetrics {
    let cfg = engine.config();
    finalize(
        engine.completed(),
        engine.unfinished(),
        engine.timeline(),
        MeasureSettings {
            sla_s: cfg.sla_s,
            step_s: cfg.step_s,
            warmup_s,
        },
    )
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub run_id: String,
    pub policy: String,
    pub params: String,
    pub violation_pct: f64,
    pub cpu_hours: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub lambda: f64,
    #[serde(rename = "W")]
    pub w: f64,
}

impl SummaryRecord {
    pub fn new(run_id: impl Into<String>, policy: &str, params: &str, m: &RunMetrics) -> Self {
        Self {
            run_id: run_id.into(),
            policy: policy.to_string(),
            params: params.to_string(),
            violation_pct: m.violation_pct(),
            cpu_hours: m.cpu_hours,
            l: m.mean_in_system,
            lambda: m.arrival_rate,
            w: m.mean_latency,
        }
    }
}

pub fn write_summary<W: Write>(w: W, records: &[SummaryRecord]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `bin_start_s,count` rows for latencies binned by `bin_s`.
pub fn write_latency_histogram<W: Write>(
    mut w: W,
    latencies: &[f64],
    bin_s: f64,
) -> Result<(), MetricsError> {
    if !(bin_s > 0.0) {
        return Err(bad("bin_s", "must be positive"));
    }
    let mut counts: Vec<u64> = Vec::new();
    for &l in latencies {
        let b = (l / bin_s).floor().max(0.0) as usize;
        if b >= counts.len() {
            counts.resize(b + 1, 0);
        }
        counts[b] += 1;
    }
    writeln!(w, "bin_start_s,count")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(w, "{},{}", i as f64 * bin_s, c)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub confidence: f64,
    /// Stop once the full CI length is below this fraction of |mean|.
    pub rel_width: f64,
    /// Used instead of `rel_width` when the mean is ~0.
    pub abs_width: f64,
    pub min_reps: usize,
    pub max_reps: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            rel_width: 0.10,
            abs_width: 1e-9,
            min_reps: 3,
            max_reps: 100,
            execution: Execution::available(),
        }
    }
}

impl ReplicationConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(bad("confidence", "must lie in (0, 1)"));
        }
        if !(self.rel_width > 0.0) {
            return Err(bad("rel_width", "must be positive"));
        }
        if !(self.abs_width >= 0.0) {
            return Err(bad("abs_width", "must be non-negative"));
        }
        if self.min_reps < 2 {
            return Err(bad("min_reps", "needs at least 2 replications"));
        }
        if self.max_reps < self.min_reps {
            return Err(bad("max_reps", "must be at least min_reps"));
        }
        Ok(())
    }
}

/// Mean and Student-t interval for a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn of(values: &[f64], confidence: f64) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self {
                n,
                mean,
                std_dev: f64::NAN,
                half_width: f64::INFINITY,
            };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("degrees of freedom are positive")
            .inverse_cdf(0.5 + confidence / 2.0);
        Self {
            n,
            mean,
            std_dev,
            half_width: t * std_dev / (n as f64).sqrt(),
        }
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    /// Mean was ~0 and the interval met the absolute width.
    AbsoluteWidth,
    MaxReplications,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::AbsoluteWidth => "absolute_width",
            StopReason::MaxReplications => "max_replications",
        })
    }
}

/// Whether `ci` satisfies the stopping rule.
pub fn stop_rule(ci: &Interval, cfg: &ReplicationConfig) -> Option<StopReason> {
    if ci.n < cfg.min_reps {
        return None;
    }
    if ci.mean.abs() < 1e-12 {
        (ci.length() <= cfg.abs_width).then_some(StopReason::AbsoluteWidth)
    } else {
        (ci.length() < cfg.rel_width * ci.mean.abs()).then_some(StopReason::Converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub values: Vec<f64>,
    pub mean: f64,
    pub half_width: f64,
    pub replications: usize,
    pub stop_reason: StopReason,
}

impl ReplicationReport {
    pub fn converged(&self) -> bool {
        self.stop_reason != StopReason::MaxReplications
    }
}

/// Extracts one metric from a replication output.
pub type Selector<'a, T> = &'a dyn Fn(&T) -> f64;

/// Seeds for successive replications.
pub fn replication_seeds(master_seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Runs replications until every selected metric meets the stopping rule
/// or `max_reps` is reached. Returns the per-replication outputs that were
/// kept and one report per selector. Replications run in batches; results
/// past the stopping point are dropped, so the outcome does not depend on
/// the execution mode.
pub fn replicate_runs<T, F>(
    cfg: &ReplicationConfig,
    master_seed: u64,
    run: F,
    selectors: &[Selector<'_, T>],
) -> Result<(Vec<T>, Vec<ReplicationReport>), MetricsError>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    cfg.validate()?;
    if selectors.is_empty() {
        return Err(bad("selectors", "at least one metric is required"));
    }
    let seeds = replication_seeds(master_seed, cfg.max_reps);
    let batch = match cfg.execution {
        Execution::Sequential => 1,
        Execution::Parallel => batch_size(),
    };
    let mut outputs: Vec<T> = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); selectors.len()];
    let mut stopped: Option<Vec<StopReason>> = None;

    'outer: while outputs.len() < cfg.max_reps {
        let lo = outputs.len();
        let hi = if lo < cfg.min_reps {
            cfg.min_reps.max(lo + batch)
        } else {
            lo + batch
        }
        .min(cfg.max_reps);
        let fresh = par::map(cfg.execution, seeds[lo..hi].to_vec(), &run);
        for out in fresh {
            for (v, sel) in values.iter_mut().zip(selectors) {
                v.push(sel(&out));
            }
            outputs.push(out);
            let reasons: Option<Vec<StopReason>> = values
                .iter()
                .map(|v| stop_rule(&Interval::of(v, cfg.confidence), cfg))
                .collect();
            if reasons.is_some() {
                stopped = reasons;
                break 'outer;
            }
        }
    }

    let reports = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            let ci = Interval::of(&v, cfg.confidence);
            ReplicationReport {
                mean: ci.mean,
                half_width: ci.half_width,
                replications: v.len(),
                stop_reason: stopped
                    .as_ref()
                    .map_or(StopReason::MaxReplications, |r| r[k]),
                values: v,
            }
        })
        .collect();
    Ok((outputs, reports))
}

/// Replicates a scalar metric; see [`replicate_runs`].
pub fn replicate<F>(
    cfg: &ReplicationConfig,
    master_seed: u64,
    run: F,
) -> Result<ReplicationReport, MetricsError>
where
    F: Fn(u64) -> f64 + Sync + Send,
{
    let id = |x: &f64| *x;
    let (_, mut reports) = replicate_runs(cfg, master_seed, run, &[&id])?;
    Ok(reports.remove(0))
}

#[cfg(feature = "parallel")]
fn batch_size() -> usize {
    rayon::current_num_threads().max(1)
}

#[cfg(not(feature = "parallel"))]
fn batch_size() -> usize {
    1
}
