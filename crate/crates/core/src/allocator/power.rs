use super::AllocationInstance;
use crate::grid::{
    FractionIndex, Layer, PlacementId, PowerShare, RbGeometry, RbPlacement, ResourceGrid,
};
use crate::ids::GroupId;
use crate::radio::{p_min_linear, McsTable};
use std::collections::BTreeMap;

/// Outer-layer power: the receiver cancels the inner signal first, so only
/// noise (normalized to one) remains.
pub fn outer_power(table: &McsTable, mcs: u8, gain: f64) -> Option<PowerShare> {
    table.get(mcs)?;
    p_min_linear(table.threshold(mcs), gain, 0.0, 1.0)
        .feasible()
        .and_then(PowerShare::from_fraction_ceil)
}

/// Inner-layer power with the strongest co-located outer signal `outer` as
/// interference.
pub fn inner_power(table: &McsTable, mcs: u8, gain: f64, outer: PowerShare) -> Option<PowerShare> {
    table.get(mcs)?;
    p_min_linear(table.threshold(mcs), gain, outer.as_fraction() * gain, 1.0)
        .feasible()
        .and_then(PowerShare::from_fraction_ceil)
}

/// Inner placements whose power must rise to admit an outer placement.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterPlan {
    pub placement: RbPlacement,
    pub bumps: Vec<(PlacementId, PowerShare, PowerShare)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterUndo {
    pub id: PlacementId,
    pub bumps: Vec<(PlacementId, PowerShare, PowerShare)>,
}

/// Inner placement at one anchor, before the MCS is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSite {
    probe: RbPlacement,
    gain: f64,
    outer: PowerShare,
    used: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct InnerUnder {
    id: PlacementId,
    power: PowerShare,
    mcs: u8,
    gain: f64,
    other_outer: PowerShare,
}

/// Outer placement at one anchor, before the MCS is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterSite {
    probe: RbPlacement,
    gain: f64,
    inners: [Option<InnerUnder>; 2],
}

/// Power bookkeeping of one instance's groups on a working grid.
pub struct PowerCtx<'a> {
    pub inst: &'a AllocationInstance,
    index: BTreeMap<GroupId, usize>,
}

impl<'a> PowerCtx<'a> {
    pub fn new(inst: &'a AllocationInstance) -> Self {
        Self {
            inst,
            index: inst.index_of(),
        }
    }

    pub fn group_index(&self, id: GroupId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    fn outer_above(grid: &ResourceGrid, frs: &[FractionIndex; 2]) -> PowerShare {
        grid.layer_power(frs[0], Layer::Outer)
            .max(grid.layer_power(frs[1], Layer::Outer))
    }

    /// MCS-independent part of an inner placement of group `gi` at `anchor`.
    pub fn inner_site(
        &self,
        grid: &ResourceGrid,
        gi: usize,
        anchor: FractionIndex,
    ) -> Option<InnerSite> {
        let g = &self.inst.groups[gi];
        let frs = g.shape.fractions(anchor);
        if !grid.in_bounds(frs[1]) {
            return None;
        }
        let probe = RbPlacement {
            group_id: g.group_id,
            layer: Layer::Inner,
            mcs: 0,
            geometry: g.shape,
            anchor,
            power: PowerShare::from_units(1),
        };
        grid.check(&probe).ok()?;
        let used = frs
            .iter()
            .map(|f| {
                grid.layer_power(*f, Layer::Inner).units() as u64
                    + grid.layer_power(*f, Layer::Outer).units() as u64
            })
            .max()
            .unwrap_or(0);
        Some(InnerSite {
            probe,
            gain: g.gain_over(&frs),
            outer: Self::outer_above(grid, &frs),
            used,
        })
    }

    pub fn inner_site_plan(&self, site: &InnerSite, mcs: u8) -> Option<RbPlacement> {
        let power = inner_power(&self.inst.mcs, mcs, site.gain, site.outer)?;
        if power.is_zero()
            || power > PowerShare::FULL
            || power.units() as u64 + site.used > PowerShare::SCALE as u64
        {
            return None;
        }
        Some(RbPlacement {
            mcs,
            power,
            ..site.probe
        })
    }

    /// Inner placement of group `gi` at `anchor`, if it fits.
    pub fn inner_plan(
        &self,
        grid: &ResourceGrid,
        gi: usize,
        mcs: u8,
        anchor: FractionIndex,
    ) -> Option<RbPlacement> {
        self.inner_site_plan(&self.inner_site(grid, gi, anchor)?, mcs)
    }

    pub fn place_inner(
        &self,
        grid: &mut ResourceGrid,
        gi: usize,
        mcs: u8,
        anchor: FractionIndex,
    ) -> Option<PlacementId> {
        let p = self.inner_plan(grid, gi, mcs, anchor)?;
        grid.place(p).ok()
    }

    /// MCS-independent part of an outer placement of group `gi` at `anchor`
    /// over existing inner RBs.
    pub fn outer_site(
        &self,
        grid: &ResourceGrid,
        gi: usize,
        anchor: FractionIndex,
    ) -> Option<OuterSite> {
        let g = &self.inst.groups[gi];
        let geometry: RbGeometry = g.shape;
        if !geometry.is_anchor(anchor, grid.subchannels()) {
            return None;
        }
        let frs = geometry.fractions(anchor);
        let mut inner_ids: Vec<PlacementId> = Vec::with_capacity(2);
        for f in &frs {
            let occ = grid.occupant(*f, Layer::Inner)?;
            if grid.occupant(*f, Layer::Outer).is_some() {
                return None;
            }
            if !inner_ids.contains(&occ.id) {
                inner_ids.push(occ.id);
            }
        }
        let probe = RbPlacement {
            group_id: g.group_id,
            layer: Layer::Outer,
            mcs: 0,
            geometry,
            anchor,
            power: PowerShare::from_units(1),
        };
        grid.check(&probe).ok()?;
        let mut inners = [None, None];
        for (slot, id) in inners.iter_mut().zip(inner_ids) {
            let inner = grid.get(id)?.placement;
            let ifrs = inner.fractions();
            let ig = &self.inst.groups[self.group_index(inner.group_id)?];
            let other_outer = ifrs
                .iter()
                .filter(|f| !frs.contains(f))
                .map(|f| grid.layer_power(*f, Layer::Outer))
                .max()
                .unwrap_or(PowerShare::ZERO);
            *slot = Some(InnerUnder {
                id,
                power: inner.power,
                mcs: inner.mcs,
                gain: ig.gain_over(&ifrs),
                other_outer,
            });
        }
        Some(OuterSite {
            probe,
            gain: g.gain_over(&frs),
            inners,
        })
    }

    fn bumped(&self, inner: &InnerUnder, p1: PowerShare) -> Option<PowerShare> {
        let interference = p1.max(inner.other_outer);
        let needed = inner_power(&self.inst.mcs, inner.mcs, inner.gain, interference)?;
        let new = needed.max(inner.power);
        (new.units() as u64 + interference.units() as u64 <= PowerShare::SCALE as u64)
            .then_some(new)
    }

    pub fn outer_site_fits(&self, site: &OuterSite, mcs: u8) -> bool {
        outer_power(&self.inst.mcs, mcs, site.gain).is_some_and(|p1| {
            site.inners
                .iter()
                .flatten()
                .all(|i| self.bumped(i, p1).is_some())
        })
    }

    pub fn outer_site_plan(&self, site: &OuterSite, mcs: u8) -> Option<OuterPlan> {
        let p1 = outer_power(&self.inst.mcs, mcs, site.gain)?;
        let mut bumps = Vec::with_capacity(2);
        for inner in site.inners.iter().flatten() {
            bumps.push((inner.id, inner.power, self.bumped(inner, p1)?));
        }
        Some(OuterPlan {
            placement: RbPlacement {
                mcs,
                power: p1,
                ..site.probe
            },
            bumps,
        })
    }

    /// Outer placement of group `gi` at `anchor` over existing inner RBs,
    /// with the inner powers it forces.
    pub fn outer_plan(
        &self,
        grid: &ResourceGrid,
        gi: usize,
        mcs: u8,
        anchor: FractionIndex,
    ) -> Option<OuterPlan> {
        self.outer_site_plan(&self.outer_site(grid, gi, anchor)?, mcs)
    }

    pub fn apply_outer(grid: &mut ResourceGrid, plan: &OuterPlan) -> Option<OuterUndo> {
        for &(id, _, new) in &plan.bumps {
            if grid.set_power(id, new).is_err() {
                Self::restore(grid, &plan.bumps);
                return None;
            }
        }
        match grid.place(plan.placement) {
            Ok(id) => Some(OuterUndo {
                id,
                bumps: plan.bumps.clone(),
            }),
            Err(_) => {
                Self::restore(grid, &plan.bumps);
                None
            }
        }
    }

    pub fn undo_outer(grid: &mut ResourceGrid, undo: &OuterUndo) {
        grid.remove(undo.id).expect("outer placement present");
        Self::restore(grid, &undo.bumps);
    }

    fn restore(grid: &mut ResourceGrid, bumps: &[(PlacementId, PowerShare, PowerShare)]) {
        for &(id, old, _) in bumps.iter().rev() {
            grid.set_power(id, old).expect("lowering power always fits");
        }
    }

    pub fn place_outer(
        &self,
        grid: &mut ResourceGrid,
        gi: usize,
        mcs: u8,
        anchor: FractionIndex,
    ) -> Option<OuterUndo> {
        let plan = self.outer_plan(grid, gi, mcs, anchor)?;
        Self::apply_outer(grid, &plan)
    }

    /// Highest MCS index a placement admits, found by bisection over the
    /// monotone feasibility predicate.
    pub fn max_feasible_mcs<F>(&self, fits: F) -> u8
    where
        F: Fn(u8) -> bool,
    {
        let top = self.inst.mcs.top().cqi_index;
        let (mut lo, mut hi) = (0u8, top);
        if top == 0 || !fits(1) {
            return 0;
        }
        lo = lo.max(1);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }
}
