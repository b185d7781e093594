//! Discrete-time simulator for elastic stream processing driven by
//! workload traces, with pluggable auto-scaling policies.
//!
//! The pieces, bottom up: [`dist`] (Weibull demand model), [`workload`]
//! (items, traces, synthetic bursts), [`engine`] (the stepping core),
//! [`policies`], [`metrics`] (cost, SLA violations, replication control),
//! [`analytics`] (sentiment/volume correlation) and [`experiment`] (config
//! files and policy sweeps).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod dist;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod par;
pub mod policies;
pub mod workload;

pub use engine::{distribute_cycles, Engine, SimConfig};
pub use experiment::{ExperimentSpec, RunConfig, RunError};
pub use metrics::{finalize, replicate, ReplicationConfig, ReplicationReport, RunMetrics};
pub use par::Execution;
pub use policies::{PolicySpec, ScaleDecision, ScalingPolicy};
pub use workload::{SyntheticSpec, WorkItem, Workload};
