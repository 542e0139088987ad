use super::metrics::MetricsRecord;
use super::mobility::Timeline;
use super::queue::{ApQueue, GroupQueue};
use super::steer::{reclassify, regionally_relevant, segment_priorities, steer, DeploymentMode};
use super::topology::{associate, ApKind, Association, Topology};
use crate::allocator::{
    allocate_h45v, solve_optimal, AllocError, AllocationInstance, GroupDemand, SolverConfig,
};
use crate::grid::{Direction, RbGeometry, ResourceGrid};
use crate::ids::{ApId, FlowId, GroupId, VehicleId};
use crate::radio::{pathloss_db, CqiReport, GainTable, LinkGain, McsTable, NoiseModel, Position};
use crate::traffic::{
    fairness_update, generate_flows, min_group_count, partition_groups, FairnessParams, FlowState,
    GroupKind, Priority, QosFlow, Segment, SegmentTiming, SocialGroup, TrafficClass, TrafficError,
    TrafficProfile, FAIR_FLOOR_BITS, MAX_GROUP_SIZE, RCWS_GROUP,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

const SUBFRAME_MS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorKind {
    Optimal,
    H45v,
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocatorKind::Optimal => "optimal",
            AllocatorKind::H45v => "h45v",
        })
    }
}

impl FromStr for AllocatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimal" => Ok(AllocatorKind::Optimal),
            "h45v" => Ok(AllocatorKind::H45v),
            _ => Err(format!(
                "unknown allocator `{s}` (expected optimal or h45v)"
            )),
        }
    }
}

/// Audience of Critical flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalTarget {
    /// Broadcast to every vehicle.
    Rcws,
    /// The sender's own groupcast group.
    Social,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: DeploymentMode,
    pub allocator: AllocatorKind,
    pub seed: u64,
    /// Arrivals stop after this; the run then drains.
    pub duration_s: f64,
    pub cqi_interval_ms: u64,
    pub timeout_ms: f64,
    /// Processing delay before each radio hop.
    pub processing_ms: f64,
    pub fairness: FairnessParams,
    pub critical: TrafficProfile,
    pub general: TrafficProfile,
    pub critical_target: CriticalTarget,
    /// Groupcast group count; the smallest admissible count when unset.
    pub group_count: Option<usize>,
    /// Log-normal shadowing deviation; zero disables it.
    pub shadowing_db: f64,
    pub noise_density_dbm_hz: f64,
    pub overhead: f64,
    /// Search limits for the optimal allocator.
    pub solver: SolverConfig,
    /// Keep stepping after `duration_s` until every flow has finished.
    pub drain: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: DeploymentMode::Qr,
            allocator: AllocatorKind::H45v,
            seed: 1,
            duration_s: 10.0,
            cqi_interval_ms: 100,
            timeout_ms: 7000.0,
            processing_ms: 0.0,
            fairness: FairnessParams::default(),
            critical: TrafficProfile::critical(),
            general: TrafficProfile::general(),
            critical_target: CriticalTarget::Rcws,
            group_count: None,
            shadowing_db: 4.0,
            noise_density_dbm_hz: crate::radio::DEFAULT_NOISE_DENSITY_DBM_HZ,
            overhead: 0.9,
            solver: SolverConfig {
                node_budget: 20_000,
                ..SolverConfig::default()
            },
            drain: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |name, reason: String| Err(SimError::Param { name, reason });
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return bad(
                "duration_s",
                format!("must be non-negative, got {}", self.duration_s),
            );
        }
        if self.cqi_interval_ms == 0 {
            return bad("cqi_interval_ms", "must be positive".into());
        }
        if !(self.timeout_ms > 0.0) || !self.timeout_ms.is_finite() {
            return bad(
                "timeout_ms",
                format!("must be positive, got {}", self.timeout_ms),
            );
        }
        if !(self.processing_ms >= 0.0) || !self.processing_ms.is_finite() {
            return bad(
                "processing_ms",
                format!("must be non-negative, got {}", self.processing_ms),
            );
        }
        if !(self.shadowing_db >= 0.0) || !self.shadowing_db.is_finite() {
            return bad(
                "shadowing_db",
                format!("must be non-negative, got {}", self.shadowing_db),
            );
        }
        if !(self.overhead > 0.0 && self.overhead <= 1.0) {
            return bad(
                "overhead",
                format!("must lie in (0, 1], got {}", self.overhead),
            );
        }
        if !self.noise_density_dbm_hz.is_finite() {
            return bad("noise_density_dbm_hz", "must be finite".into());
        }
        FairnessParams::new(self.fairness.t_c)?;
        for (p, class) in [
            (&self.critical, TrafficClass::Critical),
            (&self.general, TrafficClass::General),
        ] {
            p.validate()?;
            if p.class != class {
                return bad(
                    "traffic",
                    format!("{} profile has class {:?}", p.name(), p.class),
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub flows: u64,
    /// Reclassified copies opened toward a base station.
    pub copies: u64,
    pub delivered: u64,
    pub timed_out: u64,
    pub dropped: u64,
    pub subframes: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: Vec<MetricsRecord>,
    pub stats: RunStats,
}

fn sched_group(base: u32, priority: Priority) -> GroupId {
    GroupId(base << 1 | priority.index() as u32)
}

fn queue_index(ap: ApId, dir: Direction) -> usize {
    ap.0 as usize * 2 + (dir == Direction::Downlink) as usize
}

fn named_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
struct Seg {
    timing: SegmentTiming,
    parent: Option<usize>,
    job: Option<usize>,
}

#[derive(Debug, Clone)]
struct Record {
    flow: QosFlow,
    row_priority: Priority,
    segs: Vec<Seg>,
    open: u32,
    delivered: bool,
    done: bool,
}

#[derive(Debug, Clone)]
struct Job {
    record: usize,
    seg: usize,
    remaining: u64,
    eligible_ms: f64,
    cancelled: bool,
}

#[derive(Debug, Clone, Default)]
struct Audience {
    members: Vec<VehicleId>,
    min_gain: f64,
}

impl Audience {
    fn reaches_other_than(&self, origin: VehicleId) -> bool {
        self.members.iter().any(|&v| v != origin)
    }
}

/// Discrete-time network simulation advancing in 1 ms subframes.
pub struct Engine {
    cfg: SimConfig,
    topology: Topology,
    timeline: Timeline,
    mcs: Arc<McsTable>,
    noise_mw: f64,
    vehicles: Vec<VehicleId>,
    social: BTreeMap<GroupId, SocialGroup>,
    social_of: BTreeMap<VehicleId, GroupId>,
    positions: BTreeMap<VehicleId, Position>,
    assoc: BTreeMap<VehicleId, Association>,
    gains: GainTable,
    audience: BTreeMap<(ApId, GroupId), Audience>,
    critical_rng: ChaCha8Rng,
    general_rng: ChaCha8Rng,
    shadow_rng: ChaCha8Rng,
    queues: Vec<ApQueue>,
    grids: Vec<ResourceGrid>,
    jobs: Vec<Job>,
    records: Vec<Record>,
    deadlines: BTreeSet<(u64, usize)>,
    log: Vec<MetricsRecord>,
    next_flow: u32,
    now_ms: u64,
    stats: RunStats,
}

impl Engine {
    pub fn new(
        cfg: SimConfig,
        topology: Topology,
        timeline: Timeline,
        mcs: Arc<McsTable>,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let vehicles: Vec<VehicleId> = timeline.vehicles().collect();
        let mut social = BTreeMap::new();
        let mut social_of = BTreeMap::new();
        let needed = min_group_count(vehicles.len(), MAX_GROUP_SIZE);
        let n_groups = cfg.group_count.unwrap_or(needed);
        if n_groups < needed {
            return Err(SimError::Param {
                name: "group_count",
                reason: format!(
                    "{n_groups} groups cannot hold {} vehicles at {MAX_GROUP_SIZE} per group",
                    vehicles.len()
                ),
            });
        }
        for g in partition_groups(&vehicles, n_groups) {
            for &v in &g.members {
                social_of.insert(v, g.group_id);
            }
            social.insert(g.group_id, g);
        }
        social.insert(RCWS_GROUP, SocialGroup::rcws(vehicles.iter().copied()));
        let mut queues = Vec::new();
        let mut grids = Vec::new();
        for ap in topology.aps() {
            for dir in [Direction::Uplink, Direction::Downlink] {
                queues.push(ApQueue::new(ap.id, dir));
                grids.push(ResourceGrid::new(
                    ap.id,
                    dir,
                    ap.half_bandwidth_mhz(),
                    cfg.overhead,
                ));
            }
        }
        let noise_mw = NoiseModel {
            density_dbm_hz: cfg.noise_density_dbm_hz,
            ..NoiseModel::default()
        }
        .power_mw();
        let seed = cfg.seed;
        Ok(Self {
            cfg,
            topology,
            timeline,
            mcs,
            noise_mw,
            vehicles,
            social,
            social_of,
            positions: BTreeMap::new(),
            assoc: BTreeMap::new(),
            gains: GainTable::new(),
            audience: BTreeMap::new(),
            critical_rng: named_stream(seed, 1),
            general_rng: named_stream(seed, 2),
            shadow_rng: named_stream(seed, 3),
            queues,
            grids,
            jobs: Vec::new(),
            records: Vec::new(),
            deadlines: BTreeSet::new(),
            log: Vec::new(),
            next_flow: 0,
            now_ms: 0,
            stats: RunStats::default(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn log(&self) -> &[MetricsRecord] {
        &self.log
    }

    pub fn association(&self, v: VehicleId) -> Option<Association> {
        self.assoc.get(&v).copied()
    }

    pub fn queue(&self, ap: ApId, dir: Direction) -> &ApQueue {
        &self.queues[queue_index(ap, dir)]
    }

    /// Flows still in flight.
    pub fn in_flight(&self) -> usize {
        self.records.iter().filter(|r| !r.done).count()
    }

    /// Total radio backlog in bits over every queue.
    pub fn backlog_bits(&self) -> u64 {
        self.jobs
            .iter()
            .filter(|j| !j.cancelled && j.remaining > 0)
            .map(|j| j.remaining)
            .sum()
    }

    fn arrivals_open(&self) -> bool {
        (self.now_ms as f64) < self.cfg.duration_s * 1000.0
    }

    /// Whether another step is due: arrivals are still open, or draining is
    /// enabled and a flow is in flight.
    pub fn running(&self) -> bool {
        if self.arrivals_open() {
            return true;
        }
        let limit = self.cfg.duration_s * 1000.0 + self.cfg.timeout_ms + 2.0 * SUBFRAME_MS;
        self.cfg.drain && (self.now_ms as f64) < limit && self.records.iter().any(|r| !r.done)
    }

    pub fn run(mut self) -> RunOutput {
        while self.running() {
            self.step();
        }
        self.finish()
    }

    pub fn finish(mut self) -> RunOutput {
        self.log.sort_by_key(|r| (r.flow_id, r.priority_origin));
        RunOutput {
            log: self.log,
            stats: self.stats,
        }
    }

    /// One subframe: mobility, CQI refresh, arrivals, steering, allocation,
    /// delivery, timeout sweep, metrics.
    pub fn step(&mut self) {
        let t = self.now_ms as f64;
        self.advance_mobility(t);
        if self.now_ms.is_multiple_of(self.cfg.cqi_interval_ms) {
            self.refresh_cqi();
        }
        if self.arrivals_open() {
            let flows = self.arrivals(t);
            for f in flows {
                self.admit(f);
            }
        }
        let mut completions = Vec::new();
        for qi in 0..self.queues.len() {
            self.serve_queue(qi, t, &mut completions);
        }
        for (job, at) in completions {
            self.complete_job(job, at);
        }
        self.sweep_timeouts(t + SUBFRAME_MS);
        self.now_ms += 1;
        self.stats.subframes += 1;
    }

    fn advance_mobility(&mut self, t_ms: f64) {
        self.positions.clear();
        for &v in &self.vehicles {
            if let Some(p) = self.timeline.position_at(v, t_ms / 1000.0) {
                self.positions.insert(v, p);
            }
        }
    }

    fn refresh_cqi(&mut self) {
        self.gains.clear();
        self.assoc.clear();
        let shadow = (self.cfg.shadowing_db > 0.0)
            .then(|| Normal::new(0.0, self.cfg.shadowing_db).expect("finite deviation"));
        for (&v, p) in &self.positions {
            for (i, ap) in self.topology.aps().iter().enumerate() {
                if !ap.covers(p) {
                    continue;
                }
                let pl = pathloss_db(ap.model, ap.position.distance_to(p), ap.carrier_ghz)
                    .expect("validated carrier");
                let sh = shadow.map_or(0.0, |n| n.sample(&mut self.shadow_rng));
                let subchannels = self.grids[i * 2].subchannels().max(1);
                let tx_mw = crate::radio::db_to_linear(ap.tx_power_dbm) / subchannels as f64;
                let report = CqiReport::measure(
                    v,
                    ap.id,
                    self.now_ms,
                    1,
                    tx_mw,
                    &LinkGain::new(pl, sh),
                    self.noise_mw,
                );
                let gain = report.effective_gains().next().expect("one subchannel");
                self.gains.insert(v, ap.id, gain);
            }
            if let Some(a) = associate(v, &self.topology, &self.gains) {
                self.assoc.insert(v, a);
            }
        }
        self.audience.clear();
        let uses_rsus = self.cfg.mode.uses_rsus();
        for (&v, a) in &self.assoc {
            let groups = [RCWS_GROUP, self.social_of[&v]];
            let aps = std::iter::once(a.bs).chain(a.rsu.filter(|_| uses_rsus));
            for ap in aps {
                let g = self
                    .gains
                    .get(v, ap)
                    .expect("associated access points are in range");
                for sg in groups {
                    let entry = self.audience.entry((ap, sg)).or_insert_with(|| Audience {
                        members: Vec::new(),
                        min_gain: f64::INFINITY,
                    });
                    entry.members.push(v);
                    entry.min_gain = entry.min_gain.min(g);
                }
            }
        }
    }

    fn arrivals(&mut self, t: f64) -> Vec<QosFlow> {
        let covered: Vec<VehicleId> = self
            .assoc
            .keys()
            .copied()
            .filter(|v| self.positions.contains_key(v))
            .collect();
        let social_of = &self.social_of;
        let target = self.cfg.critical_target;
        let mut flows = generate_flows(
            &self.cfg.critical,
            &covered,
            &mut self.critical_rng,
            t,
            SUBFRAME_MS,
            &mut self.next_flow,
            |v| match target {
                CriticalTarget::Rcws => RCWS_GROUP,
                CriticalTarget::Social => social_of[&v],
            },
        );
        flows.extend(generate_flows(
            &self.cfg.general,
            &covered,
            &mut self.general_rng,
            t,
            SUBFRAME_MS,
            &mut self.next_flow,
            |v| social_of[&v],
        ));
        flows
    }

    /// Injects one flow now, bypassing the traffic generators.
    pub fn inject(
        &mut self,
        origin: VehicleId,
        class: TrafficClass,
        group: GroupId,
        payload_bytes: u32,
    ) -> Option<FlowId> {
        self.assoc.get(&origin)?;
        let flow_id = FlowId(self.next_flow);
        self.next_flow += 1;
        self.admit(QosFlow {
            flow_id,
            origin,
            group_id: group,
            class,
            payload_bytes,
            created_ms: self.now_ms as f64,
            path: Vec::new(),
            priorities: Vec::new(),
            state: FlowState::Queued,
        });
        Some(flow_id)
    }

    fn admit(&mut self, mut flow: QosFlow) {
        self.stats.flows += 1;
        let Some(assoc) = self.assoc.get(&flow.origin).copied() else {
            self.stats.dropped += 1;
            return;
        };
        let priority = flow.origin_priority();
        let regional = match (self.social.get(&flow.group_id), assoc.rsu) {
            (Some(g), Some(rsu)) => {
                let beyond = g.kind == GroupKind::Groupcast
                    && g.members.iter().any(|m| {
                        *m != flow.origin && self.assoc.get(m).is_some_and(|a| a.rsu != Some(rsu))
                    });
                regionally_relevant(g.kind, beyond)
            }
            _ => false,
        };
        let s = steer(priority, self.cfg.mode, assoc, regional);
        flow.priorities = segment_priorities(priority, &s.path, self.cfg.mode);
        flow.path = s.path;
        let created = flow.created_ms;
        let rec = self.records.len();
        self.records.push(Record {
            row_priority: priority,
            flow,
            segs: Vec::new(),
            open: 0,
            delivered: false,
            done: false,
        });
        self.deadlines.insert((created as u64, rec));
        let origin = self.records[rec].flow.origin;
        let enq = created + self.cfg.processing_ms;
        let seg = self.push_seg(
            rec,
            SegmentTiming::new(Segment::Uplink, s.first_hop, enq),
            None,
        );
        let head = GroupQueue {
            priority,
            social: self.records[rec].flow.group_id,
            vehicle: Some(origin),
            jobs: Default::default(),
        };
        self.enqueue(
            rec,
            seg,
            s.first_hop,
            Direction::Uplink,
            sched_group(origin.0, priority),
            head,
            enq,
        );
    }

    fn push_seg(&mut self, rec: usize, timing: SegmentTiming, parent: Option<usize>) -> usize {
        let r = &mut self.records[rec];
        r.segs.push(Seg {
            timing,
            parent,
            job: None,
        });
        r.segs.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn enqueue(
        &mut self,
        rec: usize,
        seg: usize,
        ap: ApId,
        dir: Direction,
        group: GroupId,
        head: GroupQueue,
        eligible_ms: f64,
    ) {
        let bits = self.records[rec].flow.bits();
        let job = self.jobs.len();
        self.jobs.push(Job {
            record: rec,
            seg,
            remaining: bits,
            eligible_ms,
            cancelled: false,
        });
        let r = &mut self.records[rec];
        r.segs[seg].job = Some(job);
        r.open += 1;
        self.queues[queue_index(ap, dir)].push(group, head, job, bits);
    }

    /// Opens a downlink branch to the flow's audience at `ap`; `false` when
    /// nobody but the sender is there.
    fn open_downlink(
        &mut self,
        rec: usize,
        parent: usize,
        ap: ApId,
        priority: Priority,
        at: f64,
    ) -> bool {
        let (origin, social) = (
            self.records[rec].flow.origin,
            self.records[rec].flow.group_id,
        );
        if !self
            .audience
            .get(&(ap, social))
            .is_some_and(|a| a.reaches_other_than(origin))
        {
            return false;
        }
        let enq = at + self.cfg.processing_ms;
        let seg = self.push_seg(
            rec,
            SegmentTiming::new(Segment::Downlink, ap, enq),
            Some(parent),
        );
        let head = GroupQueue {
            priority,
            social,
            vehicle: None,
            jobs: Default::default(),
        };
        self.enqueue(
            rec,
            seg,
            ap,
            Direction::Downlink,
            sched_group(social.0, priority),
            head,
            enq,
        );
        true
    }

    fn serve_queue(&mut self, qi: usize, t: f64, completions: &mut Vec<(usize, f64)>) {
        if self.queues[qi].is_empty() {
            self.update_fairness(qi, &BTreeMap::new());
            self.queues[qi].account(0, false, SUBFRAME_MS);
            return;
        }
        let ap = self.queues[qi].ap_id;
        let geometry = match self.topology.ap(ap).kind {
            ApKind::Bs => RbGeometry::Normal,
            ApKind::Rsu => RbGeometry::LowLatency,
        };
        let subchannels = self.grids[qi].subchannels();
        let mut demands = Vec::new();
        let mut orphaned = Vec::new();
        let jobs = &self.jobs;
        let queue = &mut self.queues[qi];
        queue.groups.retain(|_, g| {
            g.jobs.retain(|&j| !jobs[j].cancelled);
            !g.jobs.is_empty()
        });
        let mut backlog = BTreeMap::new();
        for (&gid, g) in &queue.groups {
            let bits: u64 = g
                .jobs
                .iter()
                .map(|&j| &jobs[j])
                .take_while(|j| j.eligible_ms <= t)
                .map(|j| j.remaining)
                .sum();
            if bits == 0 {
                continue;
            }
            backlog.insert(gid, bits);
            let (size, gain) = match g.vehicle {
                Some(v) => (1, self.gains.get(v, ap)),
                None => match self.audience.get(&(ap, g.social)) {
                    Some(a) => (a.members.len() as u32, Some(a.min_gain)),
                    None => {
                        orphaned.push(gid);
                        continue;
                    }
                },
            };
            let Some(gain) = gain else { continue };
            demands.push(GroupDemand {
                group_id: gid,
                priority: g.priority,
                bits,
                fair: queue.fair.get(&gid).copied().unwrap_or(FAIR_FLOOR_BITS),
                size,
                shape: geometry,
                gains: vec![gain; subchannels],
            });
        }
        for gid in orphaned {
            let g = queue.groups.remove(&gid).expect("present");
            for j in g.jobs {
                self.jobs[j].cancelled = true;
                completions.push((j, f64::NAN));
            }
        }
        let mut served_total = 0;
        if !demands.is_empty() {
            let inst = AllocationInstance::new(self.grids[qi].clone(), demands, self.mcs.clone())
                .expect("demands are built well-formed");
            let result = match self.cfg.allocator {
                AllocatorKind::H45v => allocate_h45v(&inst),
                AllocatorKind::Optimal => solve_optimal(&inst, self.cfg.solver),
            };
            let mut by_slot: BTreeMap<GroupId, [u64; 2]> = BTreeMap::new();
            for p in &result.placements {
                let slot = (p.end_offset_ms() > 0.5) as usize;
                by_slot.entry(p.group_id).or_default()[slot] += inst.rb_bits(p.mcs);
            }
            for (i, g) in inst.groups.iter().enumerate() {
                let credit = result.served[i].min(g.bits);
                if credit == 0 {
                    continue;
                }
                served_total += credit;
                let split = by_slot.get(&g.group_id).copied().unwrap_or([0, credit]);
                let first = split[0].min(credit);
                let mut avail = [first, credit - first];
                let queue = self.queues[qi]
                    .groups
                    .get_mut(&g.group_id)
                    .expect("demand came from this queue");
                while let Some(&j) = queue.jobs.front() {
                    let job = &mut self.jobs[j];
                    if job.eligible_ms > t || avail.iter().sum::<u64>() == 0 {
                        break;
                    }
                    let r = &mut self.records[job.record];
                    let timing = &mut r.segs[job.seg].timing;
                    timing.first_tx_ms.get_or_insert(t);
                    let mut finished_at = None;
                    for (slot, a) in avail.iter_mut().enumerate() {
                        let take = (*a).min(job.remaining);
                        *a -= take;
                        job.remaining -= take;
                        if job.remaining == 0 {
                            finished_at = Some(t + 0.5 * (slot as f64 + 1.0));
                            break;
                        }
                    }
                    match finished_at {
                        Some(at) => {
                            queue.jobs.pop_front();
                            completions.push((j, at));
                        }
                        None => break,
                    }
                }
            }
        }
        self.update_fairness(qi, &backlog);
        self.queues[qi].account(served_total, !backlog.is_empty(), SUBFRAME_MS);
    }

    fn update_fairness(&mut self, qi: usize, backlog: &BTreeMap<GroupId, u64>) {
        let t_c = self.cfg.fairness.t_c;
        let q = &mut self.queues[qi];
        for gid in backlog.keys() {
            q.fair.entry(*gid).or_insert(FAIR_FLOOR_BITS);
        }
        q.fair.retain(|gid, f| {
            let bits = backlog.get(gid).copied().unwrap_or(0) as f64;
            *f = fairness_update(*f, bits, t_c).max(FAIR_FLOOR_BITS);
            bits > 0.0 || *f > FAIR_FLOOR_BITS
        });
    }

    /// Closes a job's segment. `at` is NaN for a branch abandoned because its
    /// audience left.
    fn complete_job(&mut self, job: usize, at: f64) {
        let (rec, seg) = (self.jobs[job].record, self.jobs[job].seg);
        if self.records[rec].done {
            return;
        }
        let r = &mut self.records[rec];
        r.open -= 1;
        let Some(at) = Some(at).filter(|a| !a.is_nan()) else {
            if r.open == 0 {
                self.finalize(rec, self.now_ms as f64 + SUBFRAME_MS);
            }
            return;
        };
        r.segs[seg].timing.completed_ms = Some(at);
        match r.segs[seg].timing.segment {
            Segment::Uplink => self.after_uplink(rec, seg, at),
            Segment::Downlink => r.delivered = true,
            Segment::Backhaul => {}
        }
        if self.records[rec].open == 0 {
            self.finalize(rec, at);
        }
    }

    fn after_uplink(&mut self, rec: usize, seg: usize, at: f64) {
        let ap = self.records[rec].segs[seg].timing.ap_id;
        let origin = self.records[rec].flow.origin_priority();
        self.open_downlink(rec, seg, ap, self.records[rec].row_priority, at);
        let point = self.topology.ap(ap);
        if point.kind != ApKind::Rsu || !self.records[rec].flow.traverses_backhaul() {
            return;
        }
        let bs = point.owner.expect("RSUs have an owner");
        let forwarded = reclassify(origin, self.cfg.mode);
        let mut backhaul = SegmentTiming::new(Segment::Backhaul, bs, at);
        backhaul.first_tx_ms = Some(at);
        backhaul.completed_ms = Some(at);
        if forwarded == origin {
            let bh = self.push_seg(rec, backhaul, Some(seg));
            self.open_downlink(rec, bh, bs, forwarded, at);
            return;
        }
        let parent = &self.records[rec];
        let mut flow = parent.flow.clone();
        flow.class = TrafficClass::General;
        let uplink = parent.segs[seg].clone();
        let copy = self.records.len();
        self.records.push(Record {
            flow,
            row_priority: forwarded,
            segs: vec![
                Seg {
                    job: None,
                    ..uplink
                },
                Seg {
                    timing: backhaul,
                    parent: Some(0),
                    job: None,
                },
            ],
            open: 0,
            delivered: false,
            done: false,
        });
        if self.open_downlink(copy, 1, bs, forwarded, at) {
            self.stats.copies += 1;
            let created = self.records[copy].flow.created_ms as u64;
            self.deadlines.insert((created, copy));
        } else {
            self.records.pop();
        }
    }

    /// Queue and transfer time along the path ending at `leaf`, with open
    /// segments measured up to `now`.
    fn path_times(&self, rec: usize, leaf: usize, now: f64) -> (f64, f64) {
        let r = &self.records[rec];
        let (mut queue, mut transfer) = (0.0, 0.0);
        let mut at = Some(leaf);
        while let Some(i) = at {
            let s = &r.segs[i].timing;
            match (s.first_tx_ms, s.completed_ms) {
                (Some(a), Some(b)) => {
                    queue += a - s.enqueued_ms;
                    transfer += b - a;
                }
                (Some(a), None) => {
                    queue += a - s.enqueued_ms;
                    transfer += now - a;
                }
                (None, _) => queue += (now - s.enqueued_ms).max(0.0),
            }
            at = r.segs[i].parent;
        }
        (queue, transfer)
    }

    fn finalize(&mut self, rec: usize, now: f64) {
        let r = &self.records[rec];
        if !r.delivered {
            self.stats.dropped += 1;
            self.records[rec].done = true;
            self.records[rec].flow.state = FlowState::Dropped;
            return;
        }
        let leaf = (0..r.segs.len())
            .filter(|&i| {
                r.segs[i].timing.segment == Segment::Downlink
                    && r.segs[i].timing.completed_ms.is_some()
            })
            .max_by(|&a, &b| {
                let (ta, tb) = (r.segs[a].timing.completed_ms, r.segs[b].timing.completed_ms);
                ta.partial_cmp(&tb).expect("finite").then(b.cmp(&a))
            })
            .expect("delivered records have a completed downlink");
        let end = r.segs[leaf].timing.completed_ms.expect("completed");
        let (queue_ms, transfer_ms) = self.path_times(rec, leaf, now);
        let e2e = end - r.flow.created_ms;
        let timed_out = e2e > self.cfg.timeout_ms;
        self.emit(rec, transfer_ms, e2e, queue_ms, timed_out);
    }

    fn emit(&mut self, rec: usize, transfer_ms: f64, e2e_ms: f64, queue_ms: f64, timed_out: bool) {
        let r = &mut self.records[rec];
        r.done = true;
        r.flow.state = if timed_out {
            FlowState::TimedOut
        } else {
            FlowState::Delivered
        };
        if timed_out {
            self.stats.timed_out += 1;
        } else {
            self.stats.delivered += 1;
        }
        self.log.push(MetricsRecord {
            flow_id: r.flow.flow_id,
            group_id: r.flow.group_id,
            priority_origin: r.row_priority,
            mode: self.cfg.mode,
            created_s: r.flow.created_ms / 1000.0,
            transfer_ms,
            e2e_ms,
            queue_ms,
            timed_out,
        });
    }

    fn sweep_timeouts(&mut self, now: f64) {
        while let Some(&(created, rec)) = self.deadlines.first() {
            if !(now - created as f64 > self.cfg.timeout_ms) {
                break;
            }
            self.deadlines.pop_first();
            if self.records[rec].done {
                continue;
            }
            let r = &self.records[rec];
            let open: Vec<usize> = (0..r.segs.len())
                .filter(|&i| {
                    r.segs[i].job.is_some_and(|j| !self.jobs[j].cancelled)
                        && r.segs[i].timing.completed_ms.is_none()
                })
                .collect();
            for &i in &open {
                let j = self.records[rec].segs[i]
                    .job
                    .expect("open segments carry a job");
                self.jobs[j].cancelled = true;
            }
            let leaf = open.last().copied().unwrap_or(r.segs.len() - 1);
            let (queue_ms, transfer_ms) = self.path_times(rec, leaf, now);
            let e2e = now - self.records[rec].flow.created_ms;
            self.records[rec].open = 0;
            self.emit(rec, transfer_ms, e2e, queue_ms, true);
        }
    }
}
