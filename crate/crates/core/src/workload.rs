//! Work items, workload classes, trace files and the synthetic generator.
//!
//! A trace is a comma-separated file with header
//! `id,post_time_s,class_id,p_pos,p_neg,p_neu,cycles` (or `delay_s` in place
//! of `cycles`). An optional class manifest lives next to it as
//! `<stem>.classes.csv` with header `class_id,name,dist,shape,scale,proportion`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{self, DistError, Weibull};

/// Tolerance on probability sums.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// Histogram bins used when a trace has no manifest and class demand is
/// estimated from the cycles column.
const ESTIMATE_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("row {row}: {msg}")]
    Malformed { row: u64, msg: String },
    #[error("row {row}: unknown class {class}")]
    UnknownClass { row: u64, class: u32 },
    #[error("trace has a delay_s column but no conversion context was supplied")]
    MissingConversion,
    #[error("trace header must be `{expected}` (or with delay_s), found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("invalid {field}: {msg}")]
    InvalidSpec { field: String, msg: String },
    #[error("sentiment does not sum to 1 ({0})")]
    SentimentSum(f64),
    #[error("sentiment component out of [0, 1]: {0}")]
    SentimentRange(f64),
    #[error("conversion input not finite or out of range: {0}")]
    Conversion(&'static str),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Probabilities that an item is positive, negative or neutral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentimentTriple {
    p_pos: f64,
    p_neg: f64,
    p_neu: f64,
}

impl SentimentTriple {
    pub fn new(p_pos: f64, p_neg: f64, p_neu: f64) -> Result<Self, WorkloadError> {
        for p in [p_pos, p_neg, p_neu] {
            if !(0.0..=1.0).contains(&p) {
                return Err(WorkloadError::SentimentRange(p));
            }
        }
        let sum = p_pos + p_neg + p_neu;
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(WorkloadError::SentimentSum(sum));
        }
        Ok(Self {
            p_pos,
            p_neg,
            p_neu,
        })
    }

    pub fn neutral() -> Self {
        Self {
            p_pos: 0.0,
            p_neg: 0.0,
            p_neu: 1.0,
        }
    }

    pub fn p_pos(&self) -> f64 {
        self.p_pos
    }

    pub fn p_neg(&self) -> f64 {
        self.p_neg
    }

    pub fn p_neu(&self) -> f64 {
        self.p_neu
    }

    /// Probability of the item being non-neutral, `p_pos + p_neg`.
    pub fn score(&self) -> f64 {
        self.p_pos + self.p_neg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One streamed unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkItem {
    pub id: u64,
    pub post_time: f64,
    pub class_id: ClassId,
    pub cycles_required: f64,
    pub cycles_remaining: f64,
    pub sentiment: SentimentTriple,
    pub completion_time: Option<f64>,
}

impl WorkItem {
    pub fn new(
        id: u64,
        post_time: f64,
        class_id: ClassId,
        cycles: f64,
        sentiment: SentimentTriple,
    ) -> Self {
        Self {
            id,
            post_time,
            class_id,
            cycles_required: cycles,
            cycles_remaining: cycles,
            sentiment,
            completion_time: None,
        }
    }

    pub fn latency(&self) -> Option<f64> {
        self.completion_time.map(|c| c - self.post_time)
    }

    /// Checks the per-item invariants.
    pub fn is_consistent(&self) -> bool {
        let cycles_ok = self.cycles_remaining >= 0.0
            && self.cycles_remaining <= self.cycles_required
            && self.cycles_required.is_finite();
        let time_ok =
            self.post_time.is_finite() && self.completion_time.is_none_or(|c| c >= self.post_time);
        let s = &self.sentiment;
        let sentiment_ok = (s.score() + s.p_neu - 1.0).abs() <= PROBABILITY_TOLERANCE;
        cycles_ok && time_ok && sentiment_ok
    }
}

/// Per-class service demand in cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemandDist {
    Weibull(Weibull),
    /// Items that cost nothing to process.
    Zero,
}

impl DemandDist {
    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        match self {
            DemandDist::Weibull(w) => w.quantile(p),
            DemandDist::Zero if (0.0..1.0).contains(&p) => Ok(0.0),
            DemandDist::Zero => Err(DistError::ProbabilityDomain(p)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DemandDist::Weibull(w) => w.sample(rng),
            DemandDist::Zero => 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DemandDist::Weibull(w) => w.mean(),
            DemandDist::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadClass {
    pub class_id: ClassId,
    pub name: String,
    pub demand: DemandDist,
    pub proportion: f64,
}

/// Flat row form of [`WorkloadClass`], shared by the manifest file and the
/// TOML configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class_id: u32,
    pub name: String,
    pub dist: String,
    #[serde(default)]
    pub shape: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
    pub proportion: f64,
}

impl TryFrom<ClassRecord> for WorkloadClass {
    type Error = WorkloadError;

    fn try_from(r: ClassRecord) -> Result<Self, Self::Error> {
        let demand = match r.dist.as_str() {
            "zero" => DemandDist::Zero,
            "weibull" => {
                let missing = |f: &str| WorkloadError::InvalidSpec {
                    field: format!("class {}.{f}", r.class_id),
                    msg: "required for weibull".into(),
                };
                let shape = r.shape.ok_or_else(|| missing("shape"))?;
                let scale = r.scale.ok_or_else(|| missing("scale"))?;
                DemandDist::Weibull(Weibull::new(shape, scale)?)
            }
            other => {
                return Err(WorkloadError::InvalidSpec {
                    field: format!("class {}.dist", r.class_id),
                    msg: format!("`{other}` is not one of weibull, zero"),
                })
            }
        };
        if !(0.0..=1.0).contains(&r.proportion) {
            return Err(WorkloadError::InvalidSpec {
                field: format!("class {}.proportion", r.class_id),
                msg: format!("{} outside [0, 1]", r.proportion),
            });
        }
        Ok(Self {
            class_id: ClassId(r.class_id),
            name: r.name,
            demand,
            proportion: r.proportion,
        })
    }
}

impl From<&WorkloadClass> for ClassRecord {
    fn from(c: &WorkloadClass) -> Self {
        let (dist, shape, scale) = match c.demand {
            DemandDist::Weibull(w) => ("weibull", Some(w.shape()), Some(w.scale())),
            DemandDist::Zero => ("zero", None, None),
        };
        Self {
            class_id: c.class_id.0,
            name: c.name.clone(),
            dist: dist.into(),
            shape,
            scale,
            proportion: c.proportion,
        }
    }
}

/// Checks that class ids are unique and proportions sum to 1.
pub fn validate_classes(classes: &[WorkloadClass]) -> Result<(), WorkloadError> {
    if classes.is_empty() {
        return Ok(());
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in classes {
        if !seen.insert(c.class_id) {
            return Err(WorkloadError::InvalidSpec {
                field: "classes".into(),
                msg: format!("duplicate class id {}", c.class_id),
            });
        }
    }
    let sum: f64 = classes.iter().map(|c| c.proportion).sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(WorkloadError::InvalidSpec {
            field: "classes".into(),
            msg: format!("proportions sum to {sum}, expected 1"),
        });
    }
    Ok(())
}

/// Items sorted by post time together with their classes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub items: Vec<WorkItem>,
    pub classes: Vec<WorkloadClass>,
}

impl Workload {
    pub fn class(&self, id: ClassId) -> Option<&WorkloadClass> {
        self.classes.iter().find(|c| c.class_id == id)
    }

    /// Draws fresh cycle demands for every item from its class distribution.
    pub fn resample_cycles<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let by_id: BTreeMap<ClassId, DemandDist> = self
            .classes
            .iter()
            .map(|c| (c.class_id, c.demand))
            .collect();
        for item in &mut self.items {
            if let Some(d) = by_id.get(&item.class_id) {
                let c = d.sample(rng);
                item.cycles_required = c;
                item.cycles_remaining = c;
            }
        }
    }
}

/// Constants for turning a measured delay into a cycle demand under uniform
/// cycle sharing: `cycles = delay × f_ref × utilization / avg_in_system`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionContext {
    pub f_ref_hz: f64,
    pub utilization: f64,
    pub avg_in_system: f64,
}

pub fn convert_delay_to_cycles(
    delay_s: f64,
    ctx: &ConversionContext,
) -> Result<f64, WorkloadError> {
    if !delay_s.is_finite() || delay_s < 0.0 {
        return Err(WorkloadError::Conversion("delay_s"));
    }
    if !ctx.f_ref_hz.is_finite() || ctx.f_ref_hz <= 0.0 {
        return Err(WorkloadError::Conversion("f_ref_hz"));
    }
    if !(ctx.utilization > 0.0 && ctx.utilization <= 1.0) {
        return Err(WorkloadError::Conversion("utilization"));
    }
    if !ctx.avg_in_system.is_finite() || ctx.avg_in_system < 1.0 {
        return Err(WorkloadError::Conversion("avg_in_system"));
    }
    Ok(delay_s * ctx.f_ref_hz * ctx.utilization / ctx.avg_in_system)
}

const TRACE_HEADER: [&str; 7] = [
    "id",
    "post_time_s",
    "class_id",
    "p_pos",
    "p_neg",
    "p_neu",
    "cycles",
];

/// Sibling manifest path: `match.csv` → `match.classes.csv`.
pub fn manifest_path(trace: &Path) -> PathBuf {
    trace.with_extension("classes.csv")
}

/// Loads a trace and, when present, its class manifest.
pub fn load_trace(path: &Path, ctx: Option<&ConversionContext>) -> Result<Workload, WorkloadError> {
    let manifest = manifest_path(path);
    let classes = if manifest.exists() {
        Some(load_class_manifest(&manifest)?)
    } else {
        None
    };
    read_trace(File::open(path)?, ctx, classes.as_deref())
}

/// Parses a trace. Class proportions always come from the record counts;
/// demand distributions come from `manifest` or are estimated from the data.
pub fn read_trace<R: Read>(
    reader: R,
    ctx: Option<&ConversionContext>,
    manifest: Option<&[WorkloadClass]>,
) -> Result<Workload, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    let delay_column = if found == TRACE_HEADER {
        false
    } else if found.len() == 7 && found[..6] == TRACE_HEADER[..6] && found[6] == "delay_s" {
        true
    } else {
        return Err(WorkloadError::BadHeader {
            expected: TRACE_HEADER.join(","),
            found: found.join(","),
        });
    };
    if delay_column && ctx.is_none() {
        return Err(WorkloadError::MissingConversion);
    }

    let mut items = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let malformed = |msg: String| WorkloadError::Malformed { row, msg };
        if rec.len() != 7 {
            return Err(malformed(format!("expected 7 fields, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64, WorkloadError> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    malformed(format!(
                        "{} is not a number: `{}`",
                        TRACE_HEADER[i], &rec[i]
                    ))
                })
        };
        let id: u64 = rec[0]
            .parse()
            .map_err(|_| malformed(format!("id is not an integer: `{}`", &rec[0])))?;
        let class: u32 = rec[2]
            .parse()
            .map_err(|_| malformed(format!("class_id is not an integer: `{}`", &rec[2])))?;
        let post_time = num(1)?;
        if post_time < 0.0 {
            return Err(malformed(format!("negative post time {post_time}")));
        }
        let sentiment = SentimentTriple::new(num(3)?, num(4)?, num(5)?)
            .map_err(|e| malformed(e.to_string()))?;
        let raw = num(6)?;
        if raw < 0.0 {
            let what = if delay_column { "delay" } else { "cycles" };
            return Err(malformed(format!("negative {what} {raw}")));
        }
        let cycles = match (delay_column, ctx) {
            (true, Some(ctx)) => convert_delay_to_cycles(raw, ctx)?,
            _ => raw,
        };
        if let Some(m) = manifest {
            if !m.iter().any(|c| c.class_id.0 == class) {
                return Err(WorkloadError::UnknownClass { row, class });
            }
        }
        items.push(WorkItem::new(
            id,
            post_time,
            ClassId(class),
            cycles,
            sentiment,
        ));
    }

    if items.windows(2).any(|w| w[1].post_time < w[0].post_time) {
        log::warn!("trace rows are not ordered by post time; sorting");
        items.sort_by(|a, b| a.post_time.total_cmp(&b.post_time));
    }

    let classes = derive_classes(&items, manifest)?;
    Ok(Workload { items, classes })
}

fn derive_classes(
    items: &[WorkItem],
    manifest: Option<&[WorkloadClass]>,
) -> Result<Vec<WorkloadClass>, WorkloadError> {
    let mut demand: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for it in items {
        demand
            .entry(it.class_id)
            .or_default()
            .push(it.cycles_required);
    }
    let total = items.len() as f64;
    demand
        .into_iter()
        .map(|(id, cycles)| {
            let proportion = cycles.len() as f64 / total;
            let known = manifest.and_then(|m| m.iter().find(|c| c.class_id == id));
            let (name, dist) = match known {
                Some(c) => (c.name.clone(), c.demand),
                None => (format!("class-{id}"), estimate_demand(&cycles)?),
            };
            Ok(WorkloadClass {
                class_id: id,
                name,
                demand: dist,
                proportion,
            })
        })
        .collect()
}

/// Zero when no item needs cycles; a likelihood fit when there is enough
/// data; otherwise an exponential with the sample mean.
fn estimate_demand(cycles: &[f64]) -> Result<DemandDist, WorkloadError> {
    let positive: Vec<f64> = cycles.iter().copied().filter(|c| *c > 0.0).collect();
    if positive.is_empty() {
        return Ok(DemandDist::Zero);
    }
    if let Ok(report) = dist::fit(&positive, ESTIMATE_BINS) {
        return Ok(DemandDist::Weibull(report.weibull));
    }
    let mean = positive.iter().sum::<f64>() / positive.len() as f64;
    Ok(DemandDist::Weibull(Weibull::new(1.0, mean)?))
}

/// Formats with nine significant digits, shortest representation.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn write_trace<W: Write>(writer: W, items: &[WorkItem]) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for it in items {
        let s = &it.sentiment;
        w.write_record([
            it.id.to_string(),
            fmt_sig9(it.post_time),
            it.class_id.to_string(),
            fmt_sig9(s.p_pos),
            fmt_sig9(s.p_neg),
            fmt_sig9(s.p_neu),
            fmt_sig9(it.cycles_required),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_class_manifest(path: &Path) -> Result<Vec<WorkloadClass>, WorkloadError> {
    read_class_manifest(File::open(path)?)
}

pub fn read_class_manifest<R: Read>(reader: R) -> Result<Vec<WorkloadClass>, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<ClassRecord>() {
        out.push(WorkloadClass::try_from(rec?)?);
    }
    validate_classes(&out)?;
    Ok(out)
}

pub fn write_class_manifest<W: Write>(
    writer: W,
    classes: &[WorkloadClass],
) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(writer);
    for c in classes {
        w.serialize(ClassRecord::from(c))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trace` and its manifest side by side.
pub fn save_workload(path: &Path, workload: &Workload) -> Result<(), WorkloadError> {
    write_trace(File::create(path)?, &workload.items)?;
    write_class_manifest(File::create(manifest_path(path))?, &workload.classes)?;
    Ok(())
}

/// One burst: a linear rise from `event_time_s` to the peak over `rise_s`,
/// then exponential decay with time constant `decay_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub event_time_s: f64,
    /// Total arrival rate at the top of the burst.
    pub peak_rate: f64,
    pub rise_s: f64,
    pub decay_s: f64,
}

impl Burst {
    fn extra_rate(&self, base: f64, t: f64) -> f64 {
        let height = (self.peak_rate - base).max(0.0);
        let dt = t - self.event_time_s;
        if dt < 0.0 {
            0.0
        } else if dt < self.rise_s {
            height * dt / self.rise_s
        } else if self.decay_s > 0.0 {
            height * (-(dt - self.rise_s) / self.decay_s).exp()
        } else if dt == self.rise_s {
            height
        } else {
            0.0
        }
    }

    fn height(&self, base: f64) -> f64 {
        (self.peak_rate - base).max(0.0)
    }
}

/// Parameters of a bursty workload whose sentiment rises ahead of each burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub duration_s: f64,
    pub base_rate: f64,
    pub bursts: Vec<Burst>,
    /// How long before each burst the sentiment score jumps.
    pub signal_lead_s: f64,
    pub baseline_score_mean: f64,
    pub baseline_score_sd: f64,
    pub burst_score_mean: f64,
    pub rng_seed: u64,
    pub classes: Vec<ClassRecord>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            duration_s: 3600.0,
            base_rate: 10.0,
            bursts: Vec::new(),
            signal_lead_s: 90.0,
            baseline_score_mean: 0.2,
            baseline_score_sd: 0.1,
            burst_score_mean: 0.95,
            rng_seed: 1,
            classes: default_class_records(),
        }
    }
}

/// A three-path pipeline: items dropped at the first stage (free), items
/// found off-topic, and items that go through full analysis.
pub fn default_class_records() -> Vec<ClassRecord> {
    vec![
        ClassRecord {
            class_id: 0,
            name: "discarded".into(),
            dist: "zero".into(),
            shape: None,
            scale: None,
            proportion: 0.3,
        },
        ClassRecord {
            class_id: 1,
            name: "off-topic".into(),
            dist: "weibull".into(),
            shape: Some(0.9),
            scale: Some(1.0e9),
            proportion: 0.4,
        },
        ClassRecord {
            class_id: 2,
            name: "analyzed".into(),
            dist: "weibull".into(),
            shape: Some(1.4),
            scale: Some(3.5e9),
            proportion: 0.3,
        },
    ]
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<Vec<WorkloadClass>, WorkloadError> {
        let bad = |field: &str, msg: String| WorkloadError::InvalidSpec {
            field: field.into(),
            msg,
        };
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(bad(
                    field,
                    format!("must be finite and non-negative, got {v}"),
                ))
            }
        };
        nonneg("duration_s", self.duration_s)?;
        nonneg("base_rate", self.base_rate)?;
        nonneg("signal_lead_s", self.signal_lead_s)?;
        nonneg("baseline_score_sd", self.baseline_score_sd)?;
        for (name, v) in [
            ("baseline_score_mean", self.baseline_score_mean),
            ("burst_score_mean", self.burst_score_mean),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        for (i, b) in self.bursts.iter().enumerate() {
            nonneg(&format!("bursts[{i}].peak_rate"), b.peak_rate)?;
            nonneg(&format!("bursts[{i}].rise_s"), b.rise_s)?;
            nonneg(&format!("bursts[{i}].decay_s"), b.decay_s)?;
            if !(0.0..=self.duration_s).contains(&b.event_time_s) {
                return Err(bad(
                    &format!("bursts[{i}].event_time_s"),
                    format!("{} outside [0, {}]", b.event_time_s, self.duration_s),
                ));
            }
        }
        if self.classes.is_empty() {
            return Err(bad("classes", "at least one class is required".into()));
        }
        let classes = self
            .classes
            .iter()
            .cloned()
            .map(WorkloadClass::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        validate_classes(&classes)?;
        Ok(classes)
    }

    /// Arrival rate at time `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.base_rate
            + self
                .bursts
                .iter()
                .map(|b| b.extra_rate(self.base_rate, t))
                .sum::<f64>()
    }

    /// True inside `[event − lead, event + rise + decay]` of any burst: the
    /// score jumps ahead of the burst and stays high for one decay constant.
    pub fn in_signal_window(&self, t: f64) -> bool {
        self.bursts.iter().any(|b| {
            t >= b.event_time_s - self.signal_lead_s && t <= b.event_time_s + b.rise_s + b.decay_s
        })
    }
}

fn quantize(p: f64) -> f64 {
    (p * 1e6).round() / 1e6
}

/// Draws a non-homogeneous Poisson arrival stream by thinning, then assigns
/// class, cycles and a sentiment triple to every arrival.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Workload, WorkloadError> {
    let classes = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let max_rate = spec.base_rate
        + spec
            .bursts
            .iter()
            .map(|b| b.height(spec.base_rate))
            .sum::<f64>();
    if spec.duration_s == 0.0 || max_rate == 0.0 {
        return Ok(Workload {
            items: Vec::new(),
            classes,
        });
    }

    let gap = Exp::new(max_rate).expect("positive rate");
    let picker = WeightedIndex::new(classes.iter().map(|c| c.proportion)).map_err(|e| {
        WorkloadError::InvalidSpec {
            field: "classes".into(),
            msg: e.to_string(),
        }
    })?;
    let sd = spec.baseline_score_sd;
    let base_score = Normal::new(spec.baseline_score_mean, sd).expect("validated sd");
    let burst_score = Normal::new(spec.burst_score_mean, sd).expect("validated sd");

    let mut items = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= spec.duration_s {
            break;
        }
        let accept: f64 = rng.random();
        if accept * max_rate >= spec.rate_at(t) {
            continue;
        }
        let class = &classes[picker.sample(&mut rng)];
        let cycles = class.demand.sample(&mut rng);
        let score_dist = if spec.in_signal_window(t) {
            &burst_score
        } else {
            &base_score
        };
        let score = quantize(score_dist.sample(&mut rng).clamp(0.0, 1.0));
        let split: f64 = rng.random();
        let p_pos = quantize(score * split);
        let p_neg = quantize(score - p_pos);
        let p_neu = quantize(1.0 - p_pos - p_neg);
        let sentiment = SentimentTriple::new(p_pos, p_neg, p_neu)?;
        items.push(WorkItem::new(
            items.len() as u64,
            t,
            class.class_id,
            cycles,
            sentiment,
        ));
    }
    Ok(Workload { items, classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const HEADER: &str = "id,post_time_s,class_id,p_pos,p_neg,p_neu,cycles\n";

    #[test]
    fn proportions_from_counts() {
        let csv = format!("{HEADER}1,0,7,0.2,0.3,0.5,10\n2,1,7,0.1,0.1,0.8,20\n3,2,9,0,0,1,0\n");
        let w = read_trace(csv.as_bytes(), None, None).unwrap();
        assert_eq!(w.items.len(), 3);
        let a = w.class(ClassId(7)).unwrap();
        let b = w.class(ClassId(9)).unwrap();
        assert_relative_eq!(a.proportion, 2.0 / 3.0);
        assert_relative_eq!(b.proportion, 1.0 / 3.0);
        assert_eq!(b.demand, DemandDist::Zero);
    }

    #[test]
    fn empty_trace_is_fine() {
        let w = read_trace(HEADER.as_bytes(), None, None).unwrap();
        assert!(w.items.is_empty());
        assert!(w.classes.is_empty());
    }

    #[test]
    fn bad_sentiment_sum_names_row() {
        let csv = format!("{HEADER}1,0,1,0.5,0.6,0.1,10\n");
        let err = read_trace(csv.as_bytes(), None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sentiment does not sum to 1"), "{msg}");
        assert!(msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn rejects_negative_values_and_garbage() {
        for row in [
            "1,-1,1,0,0,1,10",
            "1,0,1,0,0,1,-10",
            "x,0,1,0,0,1,1",
            "1,0,1,0,0,1",
        ] {
            let csv = format!("{HEADER}{row}\n");
            assert!(read_trace(csv.as_bytes(), None, None).is_err(), "{row}");
        }
    }

    #[test]
    fn unknown_class_against_manifest() {
        let manifest = vec![WorkloadClass {
            class_id: ClassId(1),
            name: "a".into(),
            demand: DemandDist::Zero,
            proportion: 1.0,
        }];
        let csv = format!("{HEADER}1,0,2,0,0,1,0\n");
        let err = read_trace(csv.as_bytes(), None, Some(&manifest)).unwrap_err();
        assert!(matches!(err, WorkloadError::UnknownClass { class: 2, .. }));
    }

    #[test]
    fn delay_column_needs_context() {
        let csv = "id,post_time_s,class_id,p_pos,p_neg,p_neu,delay_s\n1,0,1,0,0,1,192.09\n";
        assert!(matches!(
            read_trace(csv.as_bytes(), None, None),
            Err(WorkloadError::MissingConversion)
        ));
        let ctx = ConversionContext {
            f_ref_hz: 2.6e9,
            utilization: 0.9795,
            avg_in_system: 15875.32,
        };
        let w = read_trace(csv.as_bytes(), Some(&ctx), None).unwrap();
        assert_relative_eq!(
            w.items[0].cycles_required,
            30_814_849.905_387_73,
            max_relative = 1e-12
        );
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let csv = format!("{HEADER}1,5,1,0,0,1,1\n2,3,1,0,0,1,1\n");
        let w = read_trace(csv.as_bytes(), None, None).unwrap();
        assert_eq!(w.items[0].id, 2);
    }

    #[test]
    fn conversion_examples() {
        let ctx = ConversionContext {
            f_ref_hz: 2.6e9,
            utilization: 0.9795,
            avg_in_system: 15875.32,
        };
        let c = convert_delay_to_cycles(192.09, &ctx).unwrap();
        assert!((c - 3.081e7).abs() / 3.081e7 < 1e-3);
        assert_eq!(convert_delay_to_cycles(0.0, &ctx).unwrap(), 0.0);
        let doubled = ConversionContext {
            f_ref_hz: 5.2e9,
            ..ctx
        };
        assert_relative_eq!(convert_delay_to_cycles(192.09, &doubled).unwrap(), 2.0 * c);
        assert!(convert_delay_to_cycles(f64::NAN, &ctx).is_err());
        assert!(convert_delay_to_cycles(
            1.0,
            &ConversionContext {
                utilization: 0.0,
                ..ctx
            }
        )
        .is_err());
    }

    #[test]
    fn synthetic_poisson_count_and_determinism() {
        let spec = SyntheticSpec {
            duration_s: 1000.0,
            base_rate: 10.0,
            rng_seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let n = a.items.len() as f64;
        assert!((n - 10_000.0).abs() < 4.0 * 100.0, "count {n}");
        assert_eq!(a, generate_synthetic(&spec).unwrap());
        assert!(a.items.iter().all(WorkItem::is_consistent));
        assert!(a.items.windows(2).all(|w| w[0].post_time <= w[1].post_time));
    }

    #[test]
    fn synthetic_sentiment_leads_burst() {
        let spec = SyntheticSpec {
            duration_s: 1200.0,
            base_rate: 10.0,
            bursts: vec![Burst {
                event_time_s: 600.0,
                peak_rate: 100.0,
                rise_s: 60.0,
                decay_s: 120.0,
            }],
            signal_lead_s: 90.0,
            rng_seed: 3,
            ..Default::default()
        };
        let w = generate_synthetic(&spec).unwrap();
        let mean_in = |lo: f64, hi: f64| {
            let s: Vec<f64> = w
                .items
                .iter()
                .filter(|i| i.post_time >= lo && i.post_time < hi)
                .map(|i| i.sentiment.score())
                .collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        assert!(mean_in(510.0, 570.0) - mean_in(450.0, 510.0) >= 0.5);
    }

    #[test]
    fn synthetic_empty_and_invalid() {
        let spec = SyntheticSpec {
            duration_s: 0.0,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).unwrap().items.is_empty());
        let bad = SyntheticSpec {
            base_rate: -1.0,
            ..Default::default()
        };
        match generate_synthetic(&bad) {
            Err(WorkloadError::InvalidSpec { field, .. }) => assert_eq!(field, "base_rate"),
            other => panic!("unexpected {other:?}"),
        }
        let late = SyntheticSpec {
            bursts: vec![Burst {
                event_time_s: 1e9,
                peak_rate: 1.0,
                rise_s: 1.0,
                decay_s: 1.0,
            }],
            ..Default::default()
        };
        assert!(generate_synthetic(&late).is_err());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1234567891234.0), "1234567890000");
        assert_eq!(fmt_sig9(0.1), "0.1");
        assert_eq!(fmt_sig9(30814849.905387733), "30814849.9");
    }

    #[test]
    fn manifest_round_trip() {
        let classes: Vec<WorkloadClass> = default_class_records()
            .into_iter()
            .map(|r| WorkloadClass::try_from(r).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_class_manifest(&mut buf, &classes).unwrap();
        assert!(
            String::from_utf8_lossy(&buf).starts_with("class_id,name,dist,shape,scale,proportion")
        );
        assert_eq!(read_class_manifest(buf.as_slice()).unwrap(), classes);
    }
}
