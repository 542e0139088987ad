//! Discrete-time dual-connectivity network simulation.

mod engine;
mod metrics;
mod mobility;
mod queue;
mod steer;
mod topology;

pub use engine::{AllocatorKind, CriticalTarget, Engine, RunOutput, RunStats, SimConfig, SimError};
pub use metrics::{summarize, timeout_ratio, ClassSummary, MetricsRecord};
pub use mobility::{NonMonotoneTime, Timeline};
pub use queue::{queue_ratio, ApQueue};
pub use steer::{
    reclassify, regionally_relevant, segment_priorities, steer, DeploymentMode, Steering,
};
pub use topology::{associate, AccessPoint, ApClass, ApKind, Association, Topology, TopologyError};
