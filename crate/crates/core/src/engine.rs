//! Discrete-time simulation core.
//!
//! Each step of `step_s` seconds:
//!
//! 1. CPUs whose provisioning delay has elapsed join the cluster.
//! 2. Items posted during the step enter the input queue; up to
//!    `input_rate_cap × step_s` of them move on to the processing set.
//! 3. The step's cycle budget is shared among the processing set (see
//!    [`distribute_cycles`]).
//! 4. Finished items are stamped with the end of the step and logged.
//! 5. At adaptation boundaries the policy is consulted and its decision
//!    applied.
//! 6. The clock advances.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::SentimentLog;
use crate::policies::{PolicyObservation, ScaleDecision, ScalingPolicy};
use crate::workload::{WorkItem, Workload, WorkloadClass};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid {field}: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("usage window is empty")]
    EmptyWindow,
}

/// Input admission limit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InputRateCap {
    #[default]
    Unlimited,
    PerSecond(f64),
}

impl Serialize for InputRateCap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            InputRateCap::Unlimited => s.serialize_str("unlimited"),
            InputRateCap::PerSecond(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for InputRateCap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(InputRateCap::PerSecond(r)),
            Raw::Text(t) if t == "unlimited" => Ok(InputRateCap::Unlimited),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "input_rate_cap must be \"unlimited\" or a number, got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cpu_freq_hz: f64,
    pub starting_cpus: u32,
    pub step_s: f64,
    pub sla_s: f64,
    pub adapt_period_s: f64,
    pub provisioning_delay_s: f64,
    pub input_rate_cap: InputRateCap,
    /// Always zero: arrival time equals post time.
    pub network_delay_s: f64,
    /// Stop after this many seconds even if items remain.
    pub horizon_s: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cpu_freq_hz: 2.0e9,
            starting_cpus: 1,
            step_s: 1.0,
            sla_s: 300.0,
            adapt_period_s: 60.0,
            provisioning_delay_s: 60.0,
            input_rate_cap: InputRateCap::Unlimited,
            network_delay_s: 0.0,
            horizon_s: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(EngineError::Config {
                    field,
                    msg: format!("must be positive, got {v}"),
                })
            }
        };
        positive("cpu_freq_hz", self.cpu_freq_hz)?;
        positive("step_s", self.step_s)?;
        positive("sla_s", self.sla_s)?;
        positive("adapt_period_s", self.adapt_period_s)?;
        positive("provisioning_delay_s", self.provisioning_delay_s)?;
        if self.starting_cpus == 0 {
            return Err(EngineError::Config {
                field: "starting_cpus",
                msg: "must be at least 1".into(),
            });
        }
        if let InputRateCap::PerSecond(r) = self.input_rate_cap {
            positive("input_rate_cap", r)?;
        }
        if self.network_delay_s != 0.0 {
            return Err(EngineError::Config {
                field: "network_delay_s",
                msg: "only a zero network delay is modeled".into(),
            });
        }
        if let Some(h) = self.horizon_s {
            positive("horizon_s", h)?;
        }
        let ratio = self.adapt_period_s / self.step_s;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(EngineError::Config {
                field: "adapt_period_s",
                msg: "must be a whole number of steps".into(),
            });
        }
        Ok(())
    }

    pub fn steps_per_period(&self) -> u64 {
        (self.adapt_period_s / self.step_s).round() as u64
    }
}

/// CPUs requested but not usable yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingAllocation {
    pub available_at_s: f64,
    pub cpus: u32,
}

/// Cycle accounting for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepUsage {
    pub cycles_available: f64,
    pub cycles_consumed: f64,
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    pub active_cpus: u32,
    pub pending: Vec<PendingAllocation>,
    pub freq_hz: f64,
    pub usage: Vec<StepUsage>,
}

impl ClusterState {
    pub fn new(cpus: u32, freq_hz: f64) -> Self {
        Self {
            active_cpus: cpus.max(1),
            pending: Vec::new(),
            freq_hz,
            usage: Vec::new(),
        }
    }

    pub fn pending_cpus(&self) -> u32 {
        self.pending.iter().map(|p| p.cpus).sum()
    }

    /// Moves matured allocations into the active pool.
    pub fn fold_pending(&mut self, clock: f64, eps: f64) -> u32 {
        let mut added = 0;
        self.pending.retain(|p| {
            if p.available_at_s <= clock + eps {
                added += p.cpus;
                false
            } else {
                true
            }
        });
        self.active_cpus += added;
        added
    }
}

/// Applies a policy decision. Scale-out waits `provisioning_delay_s`;
/// scale-in is immediate and never drops below one CPU. Returns false when a
/// scale-in was clamped.
pub fn actuate(
    cluster: &mut ClusterState,
    decision: ScaleDecision,
    clock: f64,
    provisioning_delay_s: f64,
) -> bool {
    match decision.delta_cpus {
        0 => true,
        d if d > 0 => {
            cluster.pending.push(PendingAllocation {
                available_at_s: clock + provisioning_delay_s,
                cpus: d.min(u32::MAX as i64) as u32,
            });
            true
        }
        d => {
            let release = d.unsigned_abs();
            let floor_ok = (cluster.active_cpus as u64) > release;
            if floor_ok {
                cluster.active_cpus -= release as u32;
            } else {
                log::warn!(
                    "scale-in by {release} at t={clock} would leave no CPU; keeping 1 of {}",
                    cluster.active_cpus
                );
                cluster.active_cpus = 1;
            }
            floor_ok
        }
    }
}

/// Mean usage over the last `steps` recorded steps.
pub fn usage(cluster: &ClusterState, steps: usize) -> Result<f64, EngineError> {
    let n = cluster.usage.len();
    if steps == 0 || n == 0 {
        return Err(EngineError::EmptyWindow);
    }
    let window = &cluster.usage[n.saturating_sub(steps)..];
    let available: f64 = window.iter().map(|u| u.cycles_available).sum();
    let consumed: f64 = window.iter().map(|u| u.cycles_consumed).sum();
    if available <= 0.0 {
        return Ok(0.0);
    }
    Ok((consumed / available).clamp(0.0, 1.0))
}

fn remaining_order(items: &[WorkItem], a: usize, b: usize) -> std::cmp::Ordering {
    let (x, y) = (&items[a], &items[b]);
    x.cycles_remaining
        .total_cmp(&y.cycles_remaining)
        .then(x.post_time.total_cmp(&y.post_time))
        .then(x.id.cmp(&y.id))
}

/// Shares `budget` among `items[order]`, which must be sorted by remaining
/// cycles. Every item gets an equal share; an item needing less finishes and
/// its excess is split equally among the items not yet visited. Returns the
/// cycles left over when every item finished.
fn share_cycles(items: &mut [WorkItem], order: &[usize], budget: f64) -> f64 {
    if order.is_empty() {
        return budget;
    }
    let mut to_process = order.len();
    let mut share = budget / to_process as f64;
    let mut idle = 0.0;
    for &i in order {
        let item = &mut items[i];
        if item.cycles_remaining < share {
            let excess = share - item.cycles_remaining;
            item.cycles_remaining = 0.0;
            to_process -= 1;
            if to_process > 0 {
                share += excess / to_process as f64;
            } else {
                idle = excess;
            }
        } else {
            item.cycles_remaining -= share;
        }
    }
    idle
}

/// Outcome of one round of cycle sharing.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub completed: Vec<WorkItem>,
    pub idle_cycles: f64,
}

/// Shares `cycles_per_step` among `items` (sorted by remaining cycles, ties by
/// post time then id) and removes the items that finish, stamping them with
/// `completion_time`. The survivors keep their relative order.
pub fn distribute_cycles(
    items: &mut Vec<WorkItem>,
    cycles_per_step: f64,
    completion_time: f64,
) -> Distribution {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| remaining_order(items, a, b));
    let idle_cycles = share_cycles(items, &order, cycles_per_step);
    let mut completed = Vec::new();
    let mut kept = Vec::with_capacity(items.len());
    for mut it in items.drain(..) {
        if it.cycles_remaining == 0.0 {
            it.completion_time = Some(completion_time);
            completed.push(it);
        } else {
            kept.push(it);
        }
    }
    *items = kept;
    Distribution {
        completed,
        idle_cycles,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Admit,
    Complete,
    Decide,
    ScaleOutRequest,
    CpuReady,
    ScaleIn,
    ScaleInClamped,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Admit => "admit",
            EventKind::Complete => "complete",
            EventKind::Decide => "decide",
            EventKind::ScaleOutRequest => "scale_out_request",
            EventKind::CpuReady => "cpu_ready",
            EventKind::ScaleIn => "scale_in",
            EventKind::ScaleInClamped => "scale_in_clamped",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub clock_s: f64,
    pub kind: EventKind,
    pub item_id: Option<u64>,
    pub detail: String,
}

/// Writes `clock_s,event,item_id,detail` lines.
pub fn write_events<W: Write>(mut w: W, events: &[Event]) -> std::io::Result<()> {
    writeln!(w, "clock_s,event,item_id,detail")?;
    for e in events {
        let id = e.item_id.map(|i| i.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", e.clock_s, e.kind, id, e.detail)?;
    }
    Ok(())
}

/// Writes `clock_s,active_cpus,usage,in_system,queue_len` per step.
pub fn write_timeline<W: Write>(mut w: W, timeline: &[StepRecord]) -> std::io::Result<()> {
    writeln!(w, "clock_s,active_cpus,usage,in_system,queue_len")?;
    for r in timeline {
        let u = if r.usage.cycles_available > 0.0 {
            r.usage.cycles_consumed / r.usage.cycles_available
        } else {
            0.0
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            r.clock_s, r.active_cpus, u, r.in_system, r.queue_len
        )?;
    }
    Ok(())
}

/// Per-step snapshot used for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub clock_s: f64,
    pub active_cpus: u32,
    pub usage: StepUsage,
    pub in_system: usize,
    pub queue_len: usize,
}

/// Result of one step, mainly for tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub admitted: usize,
    pub completed: usize,
    pub budget: f64,
    pub consumed: f64,
    pub idle: f64,
    /// Remaining demand before sharing.
    pub backlog: f64,
    pub decision: Option<ScaleDecision>,
}

pub struct Engine {
    config: SimConfig,
    classes: Vec<WorkloadClass>,
    arrivals: VecDeque<WorkItem>,
    input_queue: VecDeque<WorkItem>,
    /// Ordered by post time.
    processing: Vec<WorkItem>,
    /// `processing` indices sorted by remaining cycles, kept across steps.
    order: Vec<usize>,
    completed: Vec<WorkItem>,
    cluster: ClusterState,
    sentiment: SentimentLog,
    start_s: f64,
    steps: u64,
    admit_credit: f64,
    timeline: Vec<StepRecord>,
    events: Option<Vec<Event>>,
}

impl Engine {
    pub fn new(config: SimConfig, workload: Workload) -> Result<Self, EngineError> {
        config.validate()?;
        let mut items = workload.items;
        items.sort_by(|a, b| a.post_time.total_cmp(&b.post_time).then(a.id.cmp(&b.id)));
        let start_s = items.first().map_or(0.0, |i| i.post_time);
        Ok(Self {
            cluster: ClusterState::new(config.starting_cpus, config.cpu_freq_hz),
            sentiment: SentimentLog::new(start_s, config.step_s),
            classes: workload.classes,
            arrivals: items.into(),
            input_queue: VecDeque::new(),
            processing: Vec::new(),
            order: Vec::new(),
            completed: Vec::new(),
            start_s,
            steps: 0,
            admit_credit: 0.0,
            timeline: Vec::new(),
            events: None,
            config,
        })
    }

    /// Records an event log while running.
    pub fn with_event_log(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock_at(self.steps)
    }

    fn clock_at(&self, steps: u64) -> f64 {
        self.start_s + steps as f64 * self.config.step_s
    }

    pub fn start(&self) -> f64 {
        self.start_s
    }

    pub fn cluster(&self) -> &ClusterState {
        &self.cluster
    }

    pub fn processing_set(&self) -> &[WorkItem] {
        &self.processing
    }

    pub fn input_queue(&self) -> &VecDeque<WorkItem> {
        &self.input_queue
    }

    pub fn completed(&self) -> &[WorkItem] {
        &self.completed
    }

    pub fn timeline(&self) -> &[StepRecord] {
        &self.timeline
    }

    pub fn events(&self) -> Option<&[Event]> {
        self.events.as_deref()
    }

    pub fn sentiment(&self) -> &SentimentLog {
        &self.sentiment
    }

    pub fn in_system(&self) -> usize {
        self.input_queue.len() + self.processing.len()
    }

    /// True once every item has arrived and finished.
    pub fn is_drained(&self) -> bool {
        self.arrivals.is_empty() && self.in_system() == 0
    }

    /// Items posted but not finished.
    pub fn unfinished(&self) -> impl Iterator<Item = &WorkItem> {
        self.input_queue.iter().chain(self.processing.iter())
    }

    /// Items never posted before the run stopped.
    pub fn not_arrived(&self) -> usize {
        self.arrivals.len()
    }

    fn log(&mut self, clock_s: f64, kind: EventKind, item_id: Option<u64>, detail: String) {
        if let Some(ev) = &mut self.events {
            ev.push(Event {
                clock_s,
                kind,
                item_id,
                detail,
            });
        }
    }

    /// Moves arrivals posted before `until` into the input queue, then admits
    /// up to the rate cap into the processing set.
    pub fn admit(&mut self, until: f64) -> usize {
        while self.arrivals.front().is_some_and(|i| i.post_time < until) {
            let item = self.arrivals.pop_front().expect("front checked");
            self.input_queue.push_back(item);
        }
        let n = match self.config.input_rate_cap {
            InputRateCap::Unlimited => self.input_queue.len(),
            InputRateCap::PerSecond(rate) => {
                self.admit_credit += rate * self.config.step_s;
                let whole = self.admit_credit.floor();
                let n = (whole as usize).min(self.input_queue.len());
                // Unused credit does not accumulate across idle steps.
                self.admit_credit = if n < whole as usize {
                    0.0
                } else {
                    self.admit_credit - whole
                };
                n
            }
        };
        let clock = self.clock();
        for _ in 0..n {
            let item = self.input_queue.pop_front().expect("length checked");
            if self.events.is_some() {
                self.log(clock, EventKind::Admit, Some(item.id), String::new());
            }
            self.order.push(self.processing.len());
            self.processing.push(item);
        }
        n
    }

    /// Runs one step; see the module docs for the order of phases.
    pub fn step(&mut self, policy: &mut dyn ScalingPolicy) -> StepReport {
        let step_s = self.config.step_s;
        let clock = self.clock();
        let end = self.clock_at(self.steps + 1);

        let ready = self.cluster.fold_pending(clock, 1e-9 * step_s);
        if ready > 0 {
            let active = self.cluster.active_cpus;
            self.log(
                clock,
                EventKind::CpuReady,
                None,
                format!("+{ready} active={active}"),
            );
        }

        let admitted = self.admit(end);

        let budget = self.cluster.active_cpus as f64 * self.cluster.freq_hz * step_s;
        let backlog: f64 = self.processing.iter().map(|i| i.cycles_remaining).sum();
        let items = &self.processing;
        self.order.sort_by(|&a, &b| remaining_order(items, a, b));
        let before: Vec<f64> = self.processing.iter().map(|i| i.cycles_remaining).collect();
        let idle = share_cycles(&mut self.processing, &self.order, budget);
        let consumed: f64 = self
            .processing
            .iter()
            .zip(&before)
            .map(|(i, b)| b - i.cycles_remaining)
            .sum();
        let completed = self.harvest(end);

        let usage = StepUsage {
            cycles_available: budget,
            cycles_consumed: (budget - idle).min(budget),
        };
        self.cluster.usage.push(usage);
        self.timeline.push(StepRecord {
            clock_s: clock,
            active_cpus: self.cluster.active_cpus,
            usage,
            in_system: self.in_system(),
            queue_len: self.input_queue.len(),
        });

        let decision = if self.steps.is_multiple_of(self.config.steps_per_period()) {
            Some(self.adapt(policy, clock))
        } else {
            None
        };
        self.steps += 1;

        StepReport {
            admitted,
            completed,
            budget,
            consumed,
            idle,
            backlog,
            decision,
        }
    }

    /// Removes finished items, keeping `order` consistent with the shrunken
    /// processing set.
    fn harvest(&mut self, end: f64) -> usize {
        if !self.processing.iter().any(|i| i.cycles_remaining == 0.0) {
            return 0;
        }
        let mut new_index = vec![usize::MAX; self.processing.len()];
        let mut kept = Vec::with_capacity(self.processing.len());
        let mut done = Vec::new();
        for (i, mut it) in std::mem::take(&mut self.processing).into_iter().enumerate() {
            if it.cycles_remaining == 0.0 {
                it.completion_time = Some(end);
                done.push(it);
            } else {
                new_index[i] = kept.len();
                kept.push(it);
            }
        }
        self.processing = kept;
        self.order = self
            .order
            .iter()
            .filter_map(|&i| Some(new_index[i]).filter(|&j| j != usize::MAX))
            .collect();
        let n = done.len();
        for it in done {
            self.sentiment.record(it.post_time, it.sentiment.score());
            if self.events.is_some() {
                let latency = end - it.post_time;
                self.log(
                    end,
                    EventKind::Complete,
                    Some(it.id),
                    format!("latency={latency}"),
                );
            }
            self.completed.push(it);
        }
        n
    }

    fn adapt(&mut self, policy: &mut dyn ScalingPolicy, clock: f64) -> ScaleDecision {
        let window = self.config.steps_per_period() as usize;
        let cpu_usage = usage(&self.cluster, window).unwrap_or(0.0);
        let obs = PolicyObservation {
            clock_s: clock,
            current_cpus: self.cluster.active_cpus,
            pending_cpus: self.cluster.pending_cpus(),
            cpu_usage,
            in_system_count: self.in_system(),
            classes: &self.classes,
            sentiment: &self.sentiment,
            sla_s: self.config.sla_s,
            freq_hz: self.cluster.freq_hz,
        };
        let decision = policy.decide(&obs);
        self.log(
            clock,
            EventKind::Decide,
            None,
            format!(
                "{} delta={} usage={cpu_usage:.4}",
                policy.name(),
                decision.delta_cpus
            ),
        );
        let delay = self.config.provisioning_delay_s;
        let ok = actuate(&mut self.cluster, decision, clock, delay);
        let active = self.cluster.active_cpus;
        match decision.delta_cpus {
            0 => {}
            d if d > 0 => self.log(
                clock,
                EventKind::ScaleOutRequest,
                None,
                format!("+{d} ready_at={}", clock + delay),
            ),
            d if ok => self.log(
                clock,
                EventKind::ScaleIn,
                None,
                format!("{d} active={active}"),
            ),
            d => self.log(
                clock,
                EventKind::ScaleInClamped,
                None,
                format!("{d} active={active}"),
            ),
        }
        decision
    }

    /// Steps until drained or the horizon is reached.
    pub fn run(&mut self, policy: &mut dyn ScalingPolicy) {
        let limit = self
            .config
            .horizon_s
            .map(|h| (h / self.config.step_s).ceil() as u64);
        while !self.is_drained() {
            if limit.is_some_and(|l| self.steps >= l) {
                break;
            }
            self.step(policy);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::FixedPolicy;
    use crate::workload::{ClassId, SentimentTriple};

    fn item(id: u64, post: f64, cycles: f64) -> WorkItem {
        WorkItem::new(id, post, ClassId(0), cycles, SentimentTriple::neutral())
    }

    fn remaining(items: &[WorkItem]) -> Vec<f64> {
        items.iter().map(|i| i.cycles_remaining).collect()
    }

    #[test]
    fn distribute_two_items() {
        let mut set = vec![item(0, 0.0, 3.0), item(1, 0.0, 10.0)];
        let d = distribute_cycles(&mut set, 8.0, 1.0);
        assert_eq!(d.completed.len(), 1);
        assert_eq!(d.completed[0].completion_time, Some(1.0));
        assert_eq!(remaining(&set), vec![5.0]);
        assert_eq!(d.idle_cycles, 0.0);
    }

    #[test]
    fn distribute_single_item() {
        let mut set = vec![item(0, 0.0, 10.0)];
        let d = distribute_cycles(&mut set, 8.0, 1.0);
        assert!(d.completed.is_empty());
        assert_eq!(remaining(&set), vec![2.0]);
    }

    #[test]
    fn distribute_all_finish_with_idle() {
        let mut set = vec![item(0, 0.0, 2.0), item(1, 0.0, 2.0), item(2, 0.0, 2.0)];
        let d = distribute_cycles(&mut set, 12.0, 1.0);
        assert_eq!(d.completed.len(), 3);
        assert!(set.is_empty());
        assert_eq!(d.idle_cycles, 6.0);
    }

    #[test]
    fn distribute_empty_is_noop() {
        let mut set = Vec::new();
        let d = distribute_cycles(&mut set, 12.0, 1.0);
        assert!(d.completed.is_empty());
        assert_eq!(d.idle_cycles, 12.0);
    }

    #[test]
    fn admit_respects_cap() {
        let items: Vec<_> = (0..250).map(|i| item(i, 0.0, 1.0)).collect();
        let cfg = SimConfig {
            input_rate_cap: InputRateCap::PerSecond(100.0),
            ..Default::default()
        };
        let mut e = Engine::new(
            cfg,
            Workload {
                items: items.clone(),
                classes: vec![],
            },
        )
        .unwrap();
        assert_eq!(e.admit(1.0), 100);
        assert_eq!(e.input_queue().len(), 150);

        let mut e = Engine::new(
            SimConfig::default(),
            Workload {
                items,
                classes: vec![],
            },
        )
        .unwrap();
        assert_eq!(e.admit(1.0), 250);

        let few: Vec<_> = (0..40).map(|i| item(i, 0.0, 1.0)).collect();
        let cfg = SimConfig {
            input_rate_cap: InputRateCap::PerSecond(100.0),
            ..Default::default()
        };
        let mut e = Engine::new(
            cfg,
            Workload {
                items: few,
                classes: vec![],
            },
        )
        .unwrap();
        assert_eq!(e.admit(1.0), 40);
    }

    #[test]
    fn actuate_semantics() {
        let mut c = ClusterState::new(1, 2e9);
        actuate(&mut c, ScaleDecision::new(2), 100.0, 60.0);
        assert_eq!(c.active_cpus, 1);
        assert_eq!(c.fold_pending(159.0, 1e-9), 0);
        assert_eq!(c.fold_pending(160.0, 1e-9), 2);
        assert_eq!(c.active_cpus, 3);

        let mut c = ClusterState::new(1, 2e9);
        assert!(!actuate(&mut c, ScaleDecision::new(-1), 0.0, 60.0));
        assert_eq!(c.active_cpus, 1);
        assert!(actuate(&mut c, ScaleDecision::HOLD, 0.0, 60.0));
        assert_eq!(c.active_cpus, 1);
        assert!(c.pending.is_empty());
    }

    #[test]
    fn usage_examples() {
        let mut c = ClusterState::new(1, 2e9);
        assert_eq!(usage(&c, 1), Err(EngineError::EmptyWindow));
        c.usage.push(StepUsage {
            cycles_available: 12.0,
            cycles_consumed: 6.0,
        });
        assert_eq!(usage(&c, 1).unwrap(), 0.5);
        c.usage.push(StepUsage {
            cycles_available: 12.0,
            cycles_consumed: 12.0,
        });
        assert_eq!(usage(&c, 1).unwrap(), 1.0);
        c.usage.push(StepUsage {
            cycles_available: 12.0,
            cycles_consumed: 0.0,
        });
        assert_eq!(usage(&c, 1).unwrap(), 0.0);
    }

    #[test]
    fn empty_workload_steps() {
        let mut e = Engine::new(SimConfig::default(), Workload::default()).unwrap();
        for _ in 0..10 {
            e.step(&mut FixedPolicy);
        }
        assert_eq!(e.clock(), 10.0);
        assert!(e.completed().is_empty());
        assert!(e.cluster().usage.iter().all(|u| u.cycles_consumed == 0.0));
    }

    #[test]
    fn one_cpu_step_of_work_completes_at_step_end() {
        let w = Workload {
            items: vec![item(1, 5.0, 2.0e9)],
            classes: vec![],
        };
        let mut e = Engine::new(SimConfig::default(), w).unwrap();
        let r = e.step(&mut FixedPolicy);
        assert_eq!(r.completed, 1);
        assert_eq!(e.completed()[0].completion_time, Some(6.0));
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig {
            step_s: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let odd = SimConfig {
            adapt_period_s: 2.5,
            ..Default::default()
        };
        assert!(odd.validate().is_err());
        let cap: SimConfig = toml::from_str("input_rate_cap = \"unlimited\"").unwrap();
        assert_eq!(cap.input_rate_cap, InputRateCap::Unlimited);
        let cap: SimConfig = toml::from_str("input_rate_cap = 50.0").unwrap();
        assert_eq!(cap.input_rate_cap, InputRateCap::PerSecond(50.0));
    }
}
