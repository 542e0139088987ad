//! Per-subframe resource-block allocation.
//!
//! Both solvers fill a [`ResourceGrid`] for the groups of an
//! [`AllocationInstance`], High class before Normal. Every placement runs at
//! its minimum power: outer-layer receivers cancel the inner signal, inner
//! receivers see the outer power as interference. The outcome is scored by
//! [`Objective`]: per class, the smallest served fraction of demand, then the
//! total credited bits.

mod h45v;
mod instance_io;
mod optimal;
mod power;
mod random;

pub use h45v::allocate_h45v;
pub use instance_io::{parse_instance, render_instance, InstanceFormatError};
pub use optimal::{solve_inner, solve_optimal, solve_outer, SolverConfig};
pub use power::{inner_power, outer_power, PowerCtx};
pub use random::RandomInstance;

use crate::grid::{FractionIndex, RbGeometry, RbPlacement, ResourceGrid};
use crate::ids::GroupId;
use crate::radio::McsTable;
use crate::traffic::Priority;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("group {0}: {1}")]
    Group(GroupId, String),
    #[error("duplicate group id {0}")]
    DuplicateGroup(GroupId),
}

/// A group's view of one access point direction for one subframe.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDemand {
    pub group_id: GroupId,
    pub priority: Priority,
    /// Backlog to serve this subframe.
    pub bits: u64,
    pub fair: f64,
    pub size: u32,
    pub shape: RbGeometry,
    /// Worst in-range member's effective gain (full-power SNR) per subchannel.
    pub gains: Vec<f64>,
}

impl GroupDemand {
    pub fn demand_key(&self) -> f64 {
        crate::traffic::demand_key(self.bits, self.fair, self.size as usize)
    }

    /// Weakest gain over the subchannels an RB touches.
    pub fn gain_over(&self, fractions: &[FractionIndex; 2]) -> f64 {
        let a = self.gains[fractions[0].subchannel];
        let b = self.gains[fractions[1].subchannel];
        a.min(b)
    }

    pub fn best_gain(&self) -> f64 {
        self.gains.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct AllocationInstance {
    pub grid: ResourceGrid,
    pub groups: Vec<GroupDemand>,
    pub mcs: Arc<McsTable>,
}

impl AllocationInstance {
    pub fn new(
        grid: ResourceGrid,
        groups: Vec<GroupDemand>,
        mcs: Arc<McsTable>,
    ) -> Result<Self, AllocError> {
        let inst = Self { grid, groups, mcs };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            if !seen.insert(g.group_id) {
                return Err(AllocError::DuplicateGroup(g.group_id));
            }
            if g.gains.len() != self.grid.subchannels() {
                return Err(AllocError::Group(
                    g.group_id,
                    format!(
                        "{} gains for {} subchannels",
                        g.gains.len(),
                        self.grid.subchannels()
                    ),
                ));
            }
            if g.gains.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(AllocError::Group(
                    g.group_id,
                    "gains must be positive and finite".into(),
                ));
            }
            if g.size == 0 {
                return Err(AllocError::Group(g.group_id, "empty group".into()));
            }
        }
        Ok(())
    }

    /// Group indices of one class in service order: ascending demand key,
    /// then ascending group id.
    pub fn class_order(&self, priority: Priority) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.groups.len())
            .filter(|&i| self.groups[i].priority == priority)
            .collect();
        idx.sort_by(|&a, &b| {
            let (ga, gb) = (&self.groups[a], &self.groups[b]);
            ga.demand_key()
                .total_cmp(&gb.demand_key())
                .then(ga.group_id.cmp(&gb.group_id))
        });
        idx
    }

    pub fn index_of(&self) -> BTreeMap<GroupId, usize> {
        self.groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.group_id, i))
            .collect()
    }

    pub fn rb_bits(&self, mcs: u8) -> u64 {
        self.mcs
            .get(mcs)
            .map_or(0, |e| e.bits_per_fraction as u64 * 2)
    }
}

/// Non-negative rational compared exactly; a zero denominator is `+inf`.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const INFINITY: Ratio = Ratio { num: 1, den: 0 };

    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn is_infinite(&self) -> bool {
        self.den == 0
    }

    pub fn to_f64(self) -> f64 {
        if self.den == 0 {
            f64::INFINITY
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.den == 0, other.den == 0) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => {
                (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
            }
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 0 {
            f.write_str("inf")
        } else {
            write!(f, "{:.6}", self.to_f64())
        }
    }
}

/// Score of one priority class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClassScore {
    /// Smallest `min(served, demand) / demand` over groups with demand.
    pub min_fraction: Ratio,
    /// Credited bits, excess over demand discarded.
    pub total_bits: u64,
}

/// Lexicographic score: High class first, then Normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Objective {
    pub classes: [ClassScore; 2],
}

impl Objective {
    /// Scores per-group served bits aligned with `groups`.
    pub fn evaluate(groups: &[GroupDemand], served: &[u64]) -> Self {
        let mut classes = [ClassScore {
            min_fraction: Ratio::INFINITY,
            total_bits: 0,
        }; 2];
        for (g, &s) in groups.iter().zip(served) {
            if g.bits == 0 {
                continue;
            }
            let c = &mut classes[g.priority.index()];
            let credited = s.min(g.bits);
            c.total_bits += credited;
            c.min_fraction = c.min_fraction.min(Ratio::new(credited, g.bits));
        }
        Objective { classes }
    }

    /// Smallest served fraction over every group with demand.
    pub fn served_fraction(&self) -> Ratio {
        self.classes[0]
            .min_fraction
            .min(self.classes[1].min_fraction)
    }

    pub fn total_bits(&self) -> u64 {
        self.classes[0].total_bits + self.classes[1].total_bits
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [h, n] = &self.classes;
        write!(
            f,
            "high(min={}, bits={}) normal(min={}, bits={})",
            h.min_fraction, h.total_bits, n.min_fraction, n.total_bits
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    pub nodes: u64,
    pub wall: Duration,
    /// False when a search budget cut the solve short.
    pub optimal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub placements: Vec<RbPlacement>,
    /// Raw bits carried per group, aligned with the instance's groups.
    pub served: Vec<u64>,
    pub objective: Objective,
    pub stats: SolverStats,
    /// Snapshot plus placements, with final powers.
    pub grid: ResourceGrid,
}

impl AllocationResult {
    pub fn served_by_group(&self, inst: &AllocationInstance) -> BTreeMap<GroupId, u64> {
        inst.groups
            .iter()
            .zip(&self.served)
            .map(|(g, &s)| (g.group_id, s))
            .collect()
    }

    /// Checks the final grid: every invariant holds, the snapshot's
    /// placements survive unchanged in shape, and the new placements are
    /// exactly the ones on the grid.
    pub fn verify(&self, inst: &AllocationInstance) -> Result<(), crate::grid::Violation> {
        self.grid.validate()?;
        for old in inst.grid.placements() {
            let now = self
                .grid
                .get(old.id)
                .ok_or(crate::grid::Violation::UnknownPlacement(old.id))?;
            let (a, b) = (old.placement, now.placement);
            if (a.group_id, a.layer, a.mcs, a.geometry, a.anchor)
                != (b.group_id, b.layer, b.mcs, b.geometry, b.anchor)
            {
                return Err(crate::grid::Violation::Ledger(a.anchor));
            }
        }
        let mut fresh: Vec<RbPlacement> = self
            .grid
            .placements()
            .filter(|p| inst.grid.get(p.id).is_none())
            .map(|p| p.placement)
            .collect();
        let mut listed = self.placements.clone();
        let key = |p: &RbPlacement| (p.layer, p.anchor, p.geometry);
        fresh.sort_by_key(key);
        listed.sort_by_key(key);
        if fresh != listed {
            return Err(crate::grid::Violation::Ledger(FractionIndex::new(0, 0)));
        }
        Ok(())
    }
}

/// Best-fit choice over `(location, capacity)` candidates: the smallest
/// capacity covering `demand`, else the largest; ties go to the earliest
/// candidate. Returns the candidate's index.
pub fn best_fit(candidates: &[(usize, u64)], demand: u64) -> Option<usize> {
    let mut fit = BestFit::new(demand);
    for (i, &(_, cap)) in candidates.iter().enumerate() {
        fit.offer(i, cap);
    }
    fit.pick()
}

/// Streaming form of [`best_fit`].
#[derive(Debug, Clone, Copy)]
pub struct BestFit {
    demand: u64,
    cover: Option<(usize, u64)>,
    largest: Option<(usize, u64)>,
}

impl BestFit {
    pub fn new(demand: u64) -> Self {
        Self {
            demand,
            cover: None,
            largest: None,
        }
    }

    pub fn offer(&mut self, key: usize, cap: u64) {
        if cap >= self.demand && self.cover.is_none_or(|(_, c)| cap < c) {
            self.cover = Some((key, cap));
        }
        if self.largest.is_none_or(|(_, c)| cap > c) {
            self.largest = Some((key, cap));
        }
    }

    pub fn pick(&self) -> Option<usize> {
        self.cover.or(self.largest).map(|(k, _)| k)
    }
}
