//! Auto-scaling policies.
//!
//! Every adaptation period the engine hands a [`PolicyObservation`] to the
//! active [`ScalingPolicy`] and applies the returned [`ScaleDecision`].
//!
//! * `threshold`: +1 CPU above an upper usage bound, −1 below a lower one.
//! * `load`: estimates the time to drain everything in the system from a
//!   per-class demand quantile and sizes the cluster to the SLA.
//! * `appdata`: watches the windowed mean sentiment of completed items keyed
//!   by post time and pre-allocates CPUs on a sharp rise. It runs alongside
//!   `load`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::SentimentLog;
use crate::dist::DistError;
use crate::workload::WorkloadClass;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid {field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("load policy needs at least one workload class")]
    NoClasses,
    #[error(transparent)]
    Dist(#[from] DistError),
}

fn invalid(field: &'static str, msg: impl Into<String>) -> PolicyError {
    PolicyError::Invalid {
        field,
        msg: msg.into(),
    }
}

/// What a policy sees at an adaptation boundary.
#[derive(Debug, Clone, Copy)]
pub struct PolicyObservation<'a> {
    pub clock_s: f64,
    pub current_cpus: u32,
    pub pending_cpus: u32,
    /// Mean CPU usage over the last adaptation period, in `[0, 1]`.
    pub cpu_usage: f64,
    /// Items in the input queue plus those competing for cycles.
    pub in_system_count: usize,
    pub classes: &'a [WorkloadClass],
    pub sentiment: &'a SentimentLog,
    pub sla_s: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScaleDecision {
    pub delta_cpus: i64,
}

impl ScaleDecision {
    pub const HOLD: Self = Self { delta_cpus: 0 };

    pub fn new(delta_cpus: i64) -> Self {
        Self { delta_cpus }
    }
}

pub trait ScalingPolicy: Send {
    fn name(&self) -> &'static str;
    fn decide(&mut self, obs: &PolicyObservation<'_>) -> ScaleDecision;
}

/// Never scales.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedPolicy;

impl ScalingPolicy for FixedPolicy {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn decide(&mut self, _obs: &PolicyObservation<'_>) -> ScaleDecision {
        ScaleDecision::HOLD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdPolicyCfg {
    pub upper: f64,
    pub lower: f64,
}

impl Default for ThresholdPolicyCfg {
    fn default() -> Self {
        Self {
            upper: 0.9,
            lower: 0.5,
        }
    }
}

impl ThresholdPolicyCfg {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.lower > 0.0 && self.lower < self.upper && self.upper <= 1.0) {
            return Err(invalid(
                "threshold",
                format!(
                    "need 0 < lower < upper <= 1, got lower {} upper {}",
                    self.lower, self.upper
                ),
            ));
        }
        Ok(())
    }
}

pub fn threshold_decide(cfg: &ThresholdPolicyCfg, obs: &PolicyObservation<'_>) -> ScaleDecision {
    if obs.cpu_usage > cfg.upper {
        ScaleDecision::new(1)
    } else if obs.cpu_usage < cfg.lower {
        ScaleDecision::new(-1)
    } else {
        ScaleDecision::HOLD
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    cfg: ThresholdPolicyCfg,
}

impl ThresholdPolicy {
    pub fn new(cfg: ThresholdPolicyCfg) -> Result<Self, PolicyError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl ScalingPolicy for ThresholdPolicy {
    fn name(&self) -> &'static str {
        "threshold"
    }

    fn decide(&mut self, obs: &PolicyObservation<'_>) -> ScaleDecision {
        threshold_decide(&self.cfg, obs)
    }
}

/// Quantile-based load estimation. `demand_per_item` is the class-weighted
/// quantile demand in cycles, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadPolicyCfg {
    pub quantile: f64,
    pub demand_per_item: f64,
}

impl LoadPolicyCfg {
    /// `Σ_c proportion_c · quantile(dist_c, q)` over the training classes.
    pub fn from_classes(quantile: f64, classes: &[WorkloadClass]) -> Result<Self, PolicyError> {
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(invalid(
                "load.quantile",
                format!("{quantile} outside (0, 1)"),
            ));
        }
        if classes.is_empty() {
            return Err(PolicyError::NoClasses);
        }
        let sum: f64 = classes.iter().map(|c| c.proportion).sum();
        if (sum - 1.0).abs() > crate::workload::PROBABILITY_TOLERANCE {
            return Err(invalid("load.classes", format!("proportions sum to {sum}")));
        }
        let mut demand = 0.0;
        for c in classes {
            demand += c.proportion * c.demand.quantile(quantile)?;
        }
        Ok(Self {
            quantile,
            demand_per_item: demand,
        })
    }
}

/// Seconds to process everything in the system at the quantile demand.
pub fn load_expected_delay(cfg: &LoadPolicyCfg, obs: &PolicyObservation<'_>) -> f64 {
    let capacity = obs.current_cpus.max(1) as f64 * obs.freq_hz;
    obs.in_system_count as f64 * cfg.demand_per_item / capacity
}

/// Scale decision for a given expected delay: grow to
/// `ceil(cpus · delay / sla)` above the SLA, release one CPU below half of it.
pub fn load_decide_for_delay(cpus: u32, expected_delay: f64, sla_s: f64) -> ScaleDecision {
    if expected_delay > sla_s {
        let target = (cpus as f64 * (expected_delay / sla_s)).ceil();
        ScaleDecision::new(target as i64 - cpus as i64)
    } else if expected_delay < sla_s / 2.0 {
        ScaleDecision::new(-1)
    } else {
        ScaleDecision::HOLD
    }
}

pub fn load_decide(cfg: &LoadPolicyCfg, obs: &PolicyObservation<'_>) -> ScaleDecision {
    load_decide_for_delay(obs.current_cpus, load_expected_delay(cfg, obs), obs.sla_s)
}

#[derive(Debug, Clone)]
pub struct LoadPolicy {
    cfg: LoadPolicyCfg,
}

impl LoadPolicy {
    pub fn new(cfg: LoadPolicyCfg) -> Self {
        Self { cfg }
    }

    pub fn cfg(&self) -> &LoadPolicyCfg {
        &self.cfg
    }
}

impl ScalingPolicy for LoadPolicy {
    fn name(&self) -> &'static str {
        "load"
    }

    fn decide(&mut self, obs: &PolicyObservation<'_>) -> ScaleDecision {
        load_decide(&self.cfg, obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppdataPolicyCfg {
    pub window_s: f64,
    pub jump_threshold: f64,
    pub extra_cpus: u32,
    /// Minimum time between triggers; defaults to one window.
    pub cooldown_s: Option<f64>,
}

impl Default for AppdataPolicyCfg {
    fn default() -> Self {
        Self {
            window_s: 120.0,
            jump_threshold: 0.5,
            extra_cpus: 1,
            cooldown_s: None,
        }
    }
}

impl AppdataPolicyCfg {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(invalid(
                "appdata.window_s",
                format!("{} is not positive", self.window_s),
            ));
        }
        if self.extra_cpus < 1 {
            return Err(invalid("appdata.extra_cpus", "must be at least 1"));
        }
        if !(self.jump_threshold > 0.0) {
            return Err(invalid("appdata.jump_threshold", "must be positive"));
        }
        if let Some(c) = self.cooldown_s {
            if !(c >= 0.0) {
                return Err(invalid("appdata.cooldown_s", "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn cooldown(&self) -> f64 {
        self.cooldown_s.unwrap_or(self.window_s)
    }
}

/// Sentiment-jump detector with its last trigger time.
#[derive(Debug, Clone)]
pub struct AppdataPolicy {
    cfg: AppdataPolicyCfg,
    last_trigger: Option<f64>,
}

impl AppdataPolicy {
    pub fn new(cfg: AppdataPolicyCfg) -> Result<Self, PolicyError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            last_trigger: None,
        })
    }

    /// Compares the mean score of items posted in `[clock − w, clock)` with
    /// `[clock − 2w, clock − w)`.
    pub fn decide(&mut self, obs: &PolicyObservation<'_>) -> ScaleDecision {
        let w = self.cfg.window_s;
        let recent = obs.sentiment.window_mean(obs.clock_s - w, obs.clock_s);
        let before = obs
            .sentiment
            .window_mean(obs.clock_s - 2.0 * w, obs.clock_s - w);
        let (Some(a), Some(b)) = (recent, before) else {
            return ScaleDecision::HOLD;
        };
        let cooled = self
            .last_trigger
            .is_none_or(|t| obs.clock_s - t >= self.cfg.cooldown());
        if a - b >= self.cfg.jump_threshold && cooled {
            self.last_trigger = Some(obs.clock_s);
            ScaleDecision::new(self.cfg.extra_cpus as i64)
        } else {
            ScaleDecision::HOLD
        }
    }
}

/// Out-deltas add; a positive appdata delta overrides load's release.
pub fn combine(load: ScaleDecision, appdata: ScaleDecision) -> ScaleDecision {
    let extra = appdata.delta_cpus.max(0);
    if extra == 0 {
        load
    } else {
        ScaleDecision::new(load.delta_cpus.max(0) + extra)
    }
}

/// `load` with an optional `appdata` detector running next to it.
#[derive(Debug, Clone)]
pub struct CompositePolicy {
    load: LoadPolicy,
    appdata: Option<AppdataPolicy>,
}

impl CompositePolicy {
    pub fn new(load: LoadPolicy, appdata: Option<AppdataPolicy>) -> Self {
        Self { load, appdata }
    }
}

impl ScalingPolicy for CompositePolicy {
    fn name(&self) -> &'static str {
        if self.appdata.is_some() {
            "appdata"
        } else {
            "load"
        }
    }

    fn decide(&mut self, obs: &PolicyObservation<'_>) -> ScaleDecision {
        let load = self.load.decide(obs);
        match &mut self.appdata {
            Some(a) => combine(load, a.decide(obs)),
            None => load,
        }
    }
}

/// Serializable policy selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum PolicySpec {
    Fixed,
    Threshold(ThresholdPolicyCfg),
    Load {
        quantile: f64,
    },
    Appdata {
        /// Quantile of the load policy it runs beside.
        quantile: f64,
        #[serde(flatten)]
        cfg: AppdataPolicyCfg,
    },
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Fixed => "fixed",
            PolicySpec::Threshold(_) => "threshold",
            PolicySpec::Load { .. } => "load",
            PolicySpec::Appdata { .. } => "appdata",
        }
    }

    /// Short parameter label, e.g. `upper=0.8` or `q=0.99999;k=3`.
    pub fn params(&self) -> String {
        match self {
            PolicySpec::Fixed => String::new(),
            PolicySpec::Threshold(c) => format!("upper={};lower={}", c.upper, c.lower),
            PolicySpec::Load { quantile } => format!("q={quantile}"),
            PolicySpec::Appdata { quantile, cfg } => {
                format!("q={quantile};k={};window={}", cfg.extra_cpus, cfg.window_s)
            }
        }
    }

    /// Instantiates the policy; `classes` supplies the demand model for
    /// `load` and `appdata`.
    pub fn build(&self, classes: &[WorkloadClass]) -> Result<Box<dyn ScalingPolicy>, PolicyError> {
        Ok(match self {
            PolicySpec::Fixed => Box::new(FixedPolicy),
            PolicySpec::Threshold(c) => Box::new(ThresholdPolicy::new(*c)?),
            PolicySpec::Load { quantile } => Box::new(CompositePolicy::new(
                LoadPolicy::new(LoadPolicyCfg::from_classes(*quantile, classes)?),
                None,
            )),
            PolicySpec::Appdata { quantile, cfg } => Box::new(CompositePolicy::new(
                LoadPolicy::new(LoadPolicyCfg::from_classes(*quantile, classes)?),
                Some(AppdataPolicy::new(*cfg)?),
            )),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Weibull;
    use crate::workload::{ClassId, DemandDist};

    fn obs<'a>(log: &'a SentimentLog, classes: &'a [WorkloadClass]) -> PolicyObservation<'a> {
        PolicyObservation {
            clock_s: 0.0,
            current_cpus: 1,
            pending_cpus: 0,
            cpu_usage: 0.0,
            in_system_count: 0,
            classes,
            sentiment: log,
            sla_s: 300.0,
            freq_hz: 2.0e9,
        }
    }

    #[test]
    fn threshold_examples() {
        let log = SentimentLog::new(0.0, 1.0);
        let cfg = |upper| ThresholdPolicyCfg { upper, lower: 0.5 };
        let mut o = obs(&log, &[]);
        o.cpu_usage = 0.85;
        assert_eq!(threshold_decide(&cfg(0.8), &o).delta_cpus, 1);
        o.cpu_usage = 0.40;
        assert_eq!(threshold_decide(&cfg(0.8), &o).delta_cpus, -1);
        o.cpu_usage = 0.60;
        assert_eq!(threshold_decide(&cfg(0.7), &o).delta_cpus, 0);
        assert!(ThresholdPolicy::new(ThresholdPolicyCfg {
            upper: 0.4,
            lower: 0.5
        })
        .is_err());
    }

    #[test]
    fn load_expected_delay_examples() {
        let log = SentimentLog::new(0.0, 1.0);
        let cfg = LoadPolicyCfg {
            quantile: 0.9,
            demand_per_item: 2e9,
        };
        let mut o = obs(&log, &[]);
        assert_eq!(load_expected_delay(&cfg, &o), 0.0);
        o.in_system_count = 150;
        assert_eq!(load_expected_delay(&cfg, &o), 150.0);
        o.current_cpus = 2;
        assert_eq!(load_expected_delay(&cfg, &o), 75.0);
    }

    #[test]
    fn load_decide_examples() {
        assert_eq!(load_decide_for_delay(4, 450.0, 300.0).delta_cpus, 2);
        assert_eq!(load_decide_for_delay(4, 100.0, 300.0).delta_cpus, -1);
        assert_eq!(load_decide_for_delay(4, 200.0, 300.0).delta_cpus, 0);
    }

    #[test]
    fn load_weights_class_quantiles() {
        let w = Weibull::new(1.0, 1e9).unwrap();
        let classes = vec![
            WorkloadClass {
                class_id: ClassId(0),
                name: "zero".into(),
                demand: DemandDist::Zero,
                proportion: 0.5,
            },
            WorkloadClass {
                class_id: ClassId(1),
                name: "exp".into(),
                demand: DemandDist::Weibull(w),
                proportion: 0.5,
            },
        ];
        let cfg = LoadPolicyCfg::from_classes(0.9, &classes).unwrap();
        let expected = 0.5 * w.quantile(0.9).unwrap();
        assert!((cfg.demand_per_item - expected).abs() <= 1e-6 * expected);
        assert!(LoadPolicyCfg::from_classes(1.0, &classes).is_err());
        assert_eq!(
            LoadPolicyCfg::from_classes(0.9, &[]),
            Err(PolicyError::NoClasses)
        );
    }

    fn log_with(before: f64, after: f64) -> SentimentLog {
        let mut log = SentimentLog::new(0.0, 1.0);
        for t in 0..120 {
            log.record(t as f64 + 0.5, before);
            log.record(120.0 + t as f64 + 0.5, after);
        }
        log
    }

    #[test]
    fn appdata_examples() {
        let cfg = AppdataPolicyCfg {
            extra_cpus: 3,
            ..Default::default()
        };
        let log = log_with(0.20, 0.75);
        let mut o = obs(&log, &[]);
        o.clock_s = 240.0;
        assert_eq!(AppdataPolicy::new(cfg).unwrap().decide(&o).delta_cpus, 3);

        let log = log_with(0.40, 0.80);
        let mut o = obs(&log, &[]);
        o.clock_s = 240.0;
        assert_eq!(AppdataPolicy::new(cfg).unwrap().decide(&o).delta_cpus, 0);

        let mut empty_recent = SentimentLog::new(0.0, 1.0);
        empty_recent.record(10.0, 0.1);
        let mut o = obs(&empty_recent, &[]);
        o.clock_s = 240.0;
        assert_eq!(AppdataPolicy::new(cfg).unwrap().decide(&o).delta_cpus, 0);
    }

    #[test]
    fn appdata_cooldown() {
        let cfg = AppdataPolicyCfg {
            extra_cpus: 2,
            ..Default::default()
        };
        let log = log_with(0.1, 0.9);
        let mut p = AppdataPolicy::new(cfg).unwrap();
        let mut o = obs(&log, &[]);
        o.clock_s = 240.0;
        assert_eq!(p.decide(&o).delta_cpus, 2);
        // Same jump still visible one period later, but inside the cooldown.
        o.clock_s = 241.0;
        assert_eq!(p.decide(&o).delta_cpus, 0);
    }

    #[test]
    fn composite_examples() {
        let d = ScaleDecision::new;
        assert_eq!(combine(d(2), d(3)), d(5));
        assert_eq!(combine(d(-1), d(3)), d(3));
        assert_eq!(combine(d(0), d(0)), d(0));
        assert_eq!(combine(d(-1), d(0)), d(-1));
    }

    #[test]
    fn spec_parses_from_toml() {
        let t: PolicySpec = toml::from_str("policy = \"threshold\"\nupper = 0.8\n").unwrap();
        assert_eq!(
            t,
            PolicySpec::Threshold(ThresholdPolicyCfg {
                upper: 0.8,
                lower: 0.5
            })
        );
        let a: PolicySpec =
            toml::from_str("policy = \"appdata\"\nquantile = 0.99999\nextra_cpus = 4\n").unwrap();
        match a {
            PolicySpec::Appdata { quantile, cfg } => {
                assert_eq!(quantile, 0.99999);
                assert_eq!(cfg.extra_cpus, 4);
                assert_eq!(cfg.window_s, 120.0);
            }
            other => panic!("{other:?}"),
        }
    }
}
