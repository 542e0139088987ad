use super::steer::DeploymentMode;
use crate::ids::{FlowId, GroupId};
use crate::traffic::Priority;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One row of the per-flow output. A flow reclassified on its way to the
/// base station yields a second, Normal-priority row for that copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub flow_id: FlowId,
    pub group_id: GroupId,
    pub priority_origin: Priority,
    pub mode: DeploymentMode,
    pub created_s: f64,
    /// Radio occupancy, first transmission to completion, summed over hops.
    pub transfer_ms: f64,
    /// Creation to last reception.
    pub e2e_ms: f64,
    pub queue_ms: f64,
    pub timed_out: bool,
}

/// Share of all flows in `log` that belong to `class` and timed out.
pub fn timeout_ratio(log: &[MetricsRecord], class: Priority) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let late = log
        .iter()
        .filter(|r| r.priority_origin == class && r.timed_out)
        .count();
    late as f64 / log.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub flows: u64,
    pub timed_out: u64,
    pub transfer_ms: f64,
    pub e2e_ms: f64,
    pub queue_ms: f64,
    pub timeout_ratio: f64,
}

/// Per mode and class: mean transfer, end-to-end and queue times, and the
/// timeout ratio against all flows of that mode.
pub fn summarize(log: &[MetricsRecord]) -> BTreeMap<(DeploymentMode, Priority), ClassSummary> {
    let mut out: BTreeMap<(DeploymentMode, Priority), ClassSummary> = BTreeMap::new();
    let mut per_mode: BTreeMap<DeploymentMode, u64> = BTreeMap::new();
    for r in log {
        *per_mode.entry(r.mode).or_default() += 1;
        let s = out.entry((r.mode, r.priority_origin)).or_default();
        s.flows += 1;
        s.timed_out += r.timed_out as u64;
        s.transfer_ms += r.transfer_ms;
        s.e2e_ms += r.e2e_ms;
        s.queue_ms += r.queue_ms;
    }
    for ((mode, _), s) in out.iter_mut() {
        let n = s.flows as f64;
        s.transfer_ms /= n;
        s.e2e_ms /= n;
        s.queue_ms /= n;
        s.timeout_ratio = s.timed_out as f64 / per_mode[mode] as f64;
    }
    out
}
