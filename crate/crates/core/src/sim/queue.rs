use crate::grid::Direction;
use crate::ids::{ApId, GroupId, VehicleId};
use crate::traffic::Priority;
use std::collections::{BTreeMap, VecDeque};

/// `λ/μ`; an idle server facing arrivals reports `+∞`.
pub fn queue_ratio(lambda: f64, mu: f64) -> f64 {
    if mu > 0.0 {
        lambda / mu
    } else if lambda > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Jobs waiting at one access point direction, FIFO per scheduling group.
#[derive(Debug, Clone)]
pub struct ApQueue {
    pub ap_id: ApId,
    pub direction: Direction,
    pub(crate) groups: BTreeMap<GroupId, GroupQueue>,
    /// Smoothed demand per scheduling group.
    pub(crate) fair: BTreeMap<GroupId, f64>,
    arrived_bits: u64,
    served_bits: u64,
    busy_ms: f64,
    elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct GroupQueue {
    pub priority: Priority,
    /// Social group whose members receive a downlink job.
    pub social: GroupId,
    /// Sender of an uplink job.
    pub vehicle: Option<VehicleId>,
    pub jobs: VecDeque<usize>,
}

impl ApQueue {
    pub fn new(ap_id: ApId, direction: Direction) -> Self {
        Self {
            ap_id,
            direction,
            groups: BTreeMap::new(),
            fair: BTreeMap::new(),
            arrived_bits: 0,
            served_bits: 0,
            busy_ms: 0.0,
            elapsed_ms: 0.0,
        }
    }

    pub(crate) fn push(&mut self, group: GroupId, head: GroupQueue, job: usize, bits: u64) {
        self.groups.entry(group).or_insert(head).jobs.push_back(job);
        self.arrived_bits += bits;
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(|g| g.jobs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub(crate) fn account(&mut self, served_bits: u64, busy: bool, dt_ms: f64) {
        self.served_bits += served_bits;
        self.elapsed_ms += dt_ms;
        if busy {
            self.busy_ms += dt_ms;
        }
    }

    /// Arrival rate in bits per second.
    pub fn lambda(&self) -> f64 {
        if self.elapsed_ms > 0.0 {
            self.arrived_bits as f64 * 1000.0 / self.elapsed_ms
        } else {
            0.0
        }
    }

    /// Service rate in bits per busy second.
    pub fn mu(&self) -> f64 {
        if self.busy_ms > 0.0 {
            self.served_bits as f64 * 1000.0 / self.busy_ms
        } else {
            0.0
        }
    }

    pub fn ratio(&self) -> f64 {
        queue_ratio(self.lambda(), self.mu())
    }
}
