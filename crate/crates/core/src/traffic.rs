//! QoS flows, social groups and the max-min fairness state.

use crate::grid::RbGeometry;
use crate::ids::{ApId, FlowId, GroupId, VehicleId};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Service floor for `g_fair` so the demand key is always defined.
pub const FAIR_FLOOR_BITS: f64 = 1.0;

/// Largest groupcast group.
pub const MAX_GROUP_SIZE: usize = 20;

/// The broadcast road-condition warning group every vehicle belongs to.
pub const RCWS_GROUP: GroupId = GroupId(0);

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("traffic profile `{name}`: {reason}")]
    Profile { name: String, reason: String },
    #[error("fairness time constant must be >= 1, got {0}")]
    TimeConstant(f64),
}

/// QoS priority. `High` sorts first and preempts `Normal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    High,
    Normal,
}

impl Priority {
    pub const ORDER: [Priority; 2] = [Priority::High, Priority::Normal];

    pub fn index(self) -> usize {
        match self {
            Priority::High => 0,
            Priority::Normal => 1,
        }
    }

    /// Exigency flag `x` carried with the priority.
    pub fn exigent(self) -> bool {
        self == Priority::High
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Priority::High => "high",
            Priority::Normal => "normal",
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Critical,
    General,
}

impl TrafficClass {
    pub fn priority(self) -> Priority {
        match self {
            TrafficClass::Critical => Priority::High,
            TrafficClass::General => Priority::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    /// Broadcast to every vehicle.
    Rcws,
    Groupcast,
}

/// Geometry a group's RBs use.
pub fn shape_for(priority: Priority) -> RbGeometry {
    match priority {
        Priority::High => RbGeometry::LowLatency,
        Priority::Normal => RbGeometry::Normal,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocialGroup {
    pub group_id: GroupId,
    pub members: BTreeSet<VehicleId>,
    pub priority: Priority,
    pub kind: GroupKind,
    /// Standing backlog at epoch start.
    pub g_bits: u64,
    pub g_fair: f64,
    pub g_shape: RbGeometry,
}

impl SocialGroup {
    pub fn rcws(members: impl IntoIterator<Item = VehicleId>) -> Self {
        Self {
            group_id: RCWS_GROUP,
            members: members.into_iter().collect(),
            priority: Priority::High,
            kind: GroupKind::Rcws,
            g_bits: 0,
            g_fair: FAIR_FLOOR_BITS,
            g_shape: shape_for(Priority::High),
        }
    }

    pub fn groupcast(group_id: GroupId, members: impl IntoIterator<Item = VehicleId>) -> Self {
        Self {
            group_id,
            members: members.into_iter().collect(),
            priority: Priority::Normal,
            kind: GroupKind::Groupcast,
            g_bits: 0,
            g_fair: FAIR_FLOOR_BITS,
            g_shape: shape_for(Priority::Normal),
        }
    }

    pub fn g_size(&self) -> usize {
        self.members.len()
    }

    pub fn demand_key(&self) -> f64 {
        demand_key(self.g_bits, self.g_fair, self.g_size())
    }

    /// Members an access point serves. `serves` says whether a vehicle is
    /// attached to (and therefore within range of) the access point.
    pub fn membership_at<F>(&self, serves: F) -> BTreeSet<VehicleId>
    where
        F: Fn(VehicleId) -> bool,
    {
        self.members
            .iter()
            .copied()
            .filter(|&v| serves(v))
            .collect()
    }
}

/// Round-robin partition into groupcast groups of at most [`MAX_GROUP_SIZE`]
/// members, ids starting at 1. The RCWS group is not included.
pub fn form_groups(vehicles: &[VehicleId]) -> Vec<SocialGroup> {
    partition_groups(vehicles, min_group_count(vehicles.len(), MAX_GROUP_SIZE))
}

/// Round-robin partition into `n_groups` groupcast groups (at least one if
/// any vehicles exist).
pub fn partition_groups(vehicles: &[VehicleId], n_groups: usize) -> Vec<SocialGroup> {
    let n_groups = n_groups.max(usize::from(!vehicles.is_empty()));
    let mut members = vec![Vec::new(); n_groups];
    for (i, &v) in vehicles.iter().enumerate() {
        members[i % n_groups].push(v);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(i, m)| SocialGroup::groupcast(GroupId(i as u32 + 1), m))
        .collect()
}

/// Smallest group count with `groups >= vehicles / max_size`.
pub fn min_group_count(vehicles: usize, max_size: usize) -> usize {
    vehicles.div_ceil(max_size.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessParams {
    /// Smoothing constant in scheduling epochs (1 ms subframes).
    pub t_c: f64,
}

impl Default for FairnessParams {
    fn default() -> Self {
        Self { t_c: 300.0 }
    }
}

impl FairnessParams {
    pub fn new(t_c: f64) -> Result<Self, TrafficError> {
        if t_c >= 1.0 && t_c.is_finite() {
            Ok(Self { t_c })
        } else {
            Err(TrafficError::TimeConstant(t_c))
        }
    }
}

/// Exponential smoothing `(1 - 1/T_c) prev + bits / T_c`.
pub fn fairness_update(prev: f64, bits: f64, t_c: f64) -> f64 {
    let w = 1.0 / t_c;
    (1.0 - w) * prev + w * bits
}

/// `g_bits / (g_fair * g_size)` with the warm-up floor applied to `g_fair`.
pub fn demand_key(bits: u64, fair: f64, size: usize) -> f64 {
    bits as f64 / (fair.max(FAIR_FLOOR_BITS) * size.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub class: TrafficClass,
    pub min_bytes: u32,
    pub max_bytes: u32,
    pub avg_bytes: f64,
    /// Poisson request rate per vehicle, packets per second.
    pub rate_pps: f64,
    pub bit_rate_kbps: f64,
}

impl TrafficProfile {
    pub fn critical() -> Self {
        Self {
            class: TrafficClass::Critical,
            min_bytes: 300,
            max_bytes: 1100,
            avg_bytes: 700.0,
            rate_pps: 11.0,
            bit_rate_kbps: 64.0,
        }
    }

    pub fn general() -> Self {
        Self {
            class: TrafficClass::General,
            min_bytes: 64,
            max_bytes: 2048,
            avg_bytes: 1056.0,
            rate_pps: 60.0,
            bit_rate_kbps: 500.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.class {
            TrafficClass::Critical => "critical",
            TrafficClass::General => "general",
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |reason: String| TrafficError::Profile {
            name: self.name().to_string(),
            reason,
        };
        if self.min_bytes == 0 || self.min_bytes > self.max_bytes {
            return Err(bad(format!(
                "size range {}..{} is empty",
                self.min_bytes, self.max_bytes
            )));
        }
        let mean = (self.min_bytes as f64 + self.max_bytes as f64) / 2.0;
        if (mean - self.avg_bytes).abs() > 1e-9 {
            return Err(bad(format!(
                "avg_bytes {} differs from the range mean {mean}",
                self.avg_bytes
            )));
        }
        if !(self.rate_pps >= 0.0) || !self.rate_pps.is_finite() {
            return Err(bad(format!(
                "rate_pps must be non-negative, got {}",
                self.rate_pps
            )));
        }
        if !(self.bit_rate_kbps >= 0.0) {
            return Err(bad(format!(
                "bit_rate_kbps must be non-negative, got {}",
                self.bit_rate_kbps
            )));
        }
        Ok(())
    }
}

/// Network segment of a flow's path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Segment {
    /// Vehicle to its RSU or BS.
    Uplink,
    /// RSU to its owning BS.
    Backhaul,
    /// Access point to target vehicles.
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowState {
    Queued,
    Transmitting,
    Delivered,
    TimedOut,
    Dropped,
}

/// Timing of one hop. Times are in ms since the run started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentTiming {
    pub segment: Segment,
    pub ap_id: ApId,
    pub enqueued_ms: f64,
    pub first_tx_ms: Option<f64>,
    pub completed_ms: Option<f64>,
}

impl SegmentTiming {
    pub fn new(segment: Segment, ap_id: ApId, enqueued_ms: f64) -> Self {
        Self {
            segment,
            ap_id,
            enqueued_ms,
            first_tx_ms: None,
            completed_ms: None,
        }
    }

    pub fn queue_ms(&self) -> f64 {
        self.first_tx_ms.map_or(0.0, |t| t - self.enqueued_ms)
    }

    pub fn transfer_ms(&self) -> f64 {
        match (self.first_tx_ms, self.completed_ms) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QosFlow {
    pub flow_id: FlowId,
    pub origin: VehicleId,
    pub group_id: GroupId,
    pub class: TrafficClass,
    pub payload_bytes: u32,
    pub created_ms: f64,
    pub path: Vec<Segment>,
    /// Priority per entry of `path`.
    pub priorities: Vec<Priority>,
    pub state: FlowState,
}

impl QosFlow {
    pub fn bits(&self) -> u64 {
        self.payload_bytes as u64 * 8
    }

    pub fn origin_priority(&self) -> Priority {
        self.class.priority()
    }

    /// Exigency flags, one per segment.
    pub fn exigency(&self) -> Vec<bool> {
        self.priorities.iter().map(|p| p.exigent()).collect()
    }

    pub fn traverses_backhaul(&self) -> bool {
        self.path.contains(&Segment::Backhaul)
    }
}

/// Draws the flows that arrive during `dt_ms`. Arrival counts are Poisson with
/// mean `rate * dt` per vehicle; vehicles are visited in the given order.
pub fn generate_flows<R, G>(
    profile: &TrafficProfile,
    vehicles: &[VehicleId],
    rng: &mut R,
    now_ms: f64,
    dt_ms: f64,
    next_id: &mut u32,
    group_for: G,
) -> Vec<QosFlow>
where
    R: Rng + ?Sized,
    G: Fn(VehicleId) -> GroupId,
{
    let mean = profile.rate_pps * dt_ms / 1000.0;
    if !(mean > 0.0) || vehicles.is_empty() {
        return Vec::new();
    }
    let arrivals = Poisson::new(mean).expect("positive mean");
    let mut out = Vec::new();
    for &v in vehicles {
        let n = arrivals.sample(rng) as u64;
        for _ in 0..n {
            let payload_bytes = rng.random_range(profile.min_bytes..=profile.max_bytes);
            let flow_id = FlowId(*next_id);
            *next_id += 1;
            out.push(QosFlow {
                flow_id,
                origin: v,
                group_id: group_for(v),
                class: profile.class,
                payload_bytes,
                created_ms: now_ms,
                path: Vec::new(),
                priorities: Vec::new(),
                state: FlowState::Queued,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vehicles(n: u32) -> Vec<VehicleId> {
        (0..n).map(VehicleId).collect()
    }

    #[test]
    fn zero_rate_yields_nothing() {
        let mut p = TrafficProfile::critical();
        p.rate_pps = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut id = 0;
        assert!(
            generate_flows(&p, &vehicles(10), &mut rng, 0.0, 1.0, &mut id, |_| {
                RCWS_GROUP
            })
            .is_empty()
        );
    }

    #[test]
    fn critical_payloads_in_range() {
        let p = TrafficProfile::critical();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut id = 0;
        let flows = generate_flows(&p, &vehicles(50), &mut rng, 0.0, 1000.0, &mut id, |_| {
            RCWS_GROUP
        });
        assert!(!flows.is_empty());
        assert!(flows
            .iter()
            .all(|f| (300..=1100).contains(&f.payload_bytes)));
        assert!(flows.iter().all(|f| f.origin_priority() == Priority::High));
    }

    #[test]
    fn generation_is_seeded() {
        let p = TrafficProfile::general();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut id = 0;
            generate_flows(&p, &vehicles(20), &mut rng, 5.0, 10.0, &mut id, |v| {
                GroupId(v.0 % 3 + 1)
            })
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn table_defaults_are_consistent() {
        for p in [TrafficProfile::critical(), TrafficProfile::general()] {
            p.validate().unwrap();
            let kbps = p.avg_bytes * 8.0 * p.rate_pps / 1000.0;
            assert!(
                (kbps - p.bit_rate_kbps).abs() / p.bit_rate_kbps < 0.05,
                "{kbps}"
            );
        }
        let mut p = TrafficProfile::general();
        p.avg_bytes = 1000.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(fairness_update(42.0, 42.0, 300.0), 42.0);
        assert_eq!(fairness_update(7.0, 11.0, 1.0), 11.0);
        assert!((fairness_update(0.0, 300.0, 300.0) - 1.0).abs() < 1e-12);
        assert!(FairnessParams::new(0.5).is_err());
    }

    #[test]
    fn demand_key_examples() {
        assert_eq!(demand_key(1000, 1.0, 10), 100.0);
        assert_eq!(demand_key(0, 55.0, 3), 0.0);
        assert_eq!(demand_key(100, 0.0, 1), 100.0);
    }

    #[test]
    fn rcws_group_is_high_broadcast() {
        let g = SocialGroup::rcws(vehicles(7));
        assert_eq!(g.priority, Priority::High);
        assert_eq!(g.g_shape, RbGeometry::LowLatency);
        assert_eq!(g.membership_at(|_| true).len(), 7);
    }

    #[test]
    fn membership_examples() {
        let g = SocialGroup::groupcast(GroupId(3), vehicles(10));
        assert!(g.membership_at(|_| false).is_empty());
        let a = g.membership_at(|v| v.0 < 4);
        let b = g.membership_at(|v| v.0 >= 4 && v.0 < 9);
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 9);
    }

    #[test]
    fn group_formation_respects_max_size() {
        for n in [0u32, 1, 19, 20, 21, 100, 140] {
            let groups = form_groups(&vehicles(n));
            assert!(groups.len() * MAX_GROUP_SIZE >= n as usize);
            assert!(groups
                .iter()
                .all(|g| g.g_size() <= MAX_GROUP_SIZE && g.g_size() >= 1));
            assert_eq!(groups.iter().map(|g| g.g_size()).sum::<usize>(), n as usize);
        }
        assert_eq!(form_groups(&vehicles(140)).len(), 7);
    }

    #[test]
    fn poisson_counts_match_mean() {
        let p = TrafficProfile::general();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut id = 0;
        let epochs = 20_000;
        let mut total = 0usize;
        for t in 0..epochs {
            total += generate_flows(&p, &vehicles(5), &mut rng, t as f64, 1.0, &mut id, |_| {
                GroupId(1)
            })
            .len();
        }
        let mean = 5.0 * 0.06 * epochs as f64;
        let se = mean.sqrt();
        assert!((total as f64 - mean).abs() < 3.0 * se, "{total} vs {mean}");
    }

    proptest! {
        #[test]
        fn fairness_is_convex(prev in 0.0f64..1e6, bits in 0.0f64..1e6, t_c in 1.0f64..1e3) {
            let f = fairness_update(prev, bits, t_c);
            let (lo, hi) = if prev <= bits { (prev, bits) } else { (bits, prev) };
            prop_assert!(f >= lo * (1.0 - 1e-12) && f <= hi * (1.0 + 1e-12));
        }
    }
}
