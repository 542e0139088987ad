use super::power::PowerCtx;
use super::{AllocationInstance, AllocationResult, BestFit, Objective, SolverStats};
use crate::grid::{Candidate, FractionIndex, Layer, PowerShare, RbGeometry, ResourceGrid};
use crate::traffic::Priority;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pool {
    /// Outer layer over a same-shape inner RB.
    Same,
    /// Outer layer of an existing combinatorial RB.
    Combined,
    /// Both layers free.
    Fresh,
    /// Outer layer over mismatched inner RBs, forming a new combinatorial RB.
    Bridge,
}

fn residual(grid: &ResourceGrid, shape: RbGeometry, anchor: FractionIndex) -> PowerShare {
    let frs = shape.fractions(anchor);
    grid.residual_power(frs[0]).min(grid.residual_power(frs[1]))
}

/// Whether the low-latency pair holding `anchor` already carries a bridge.
fn pair_bridged(grid: &ResourceGrid, anchor: FractionIndex) -> bool {
    (0..2).any(|slot| {
        grid.occupant(FractionIndex::new(anchor.subchannel, slot), Layer::Outer)
            .is_some_and(|p| p.bridged)
    })
}

fn pool(grid: &ResourceGrid, shape: RbGeometry, kind: Pool) -> Vec<FractionIndex> {
    let layer = if kind == Pool::Fresh {
        Layer::Inner
    } else {
        Layer::Outer
    };
    let mut out: Vec<FractionIndex> = grid
        .candidates(shape, layer)
        .filter(|c: &Candidate| {
            let frs = shape.fractions(c.anchor);
            match kind {
                Pool::Fresh => frs
                    .iter()
                    .all(|f| grid.occupant(*f, Layer::Outer).is_none()),
                Pool::Same => !c.bridged && grid.occupant(frs[0], Layer::Inner).is_some(),
                Pool::Combined => c.bridged && pair_bridged(grid, c.anchor),
                Pool::Bridge => c.bridged && !pair_bridged(grid, c.anchor),
            }
        })
        .map(|c| c.anchor)
        .collect();
    out.sort_by_key(|a| residual(grid, shape, *a));
    out
}

/// Hybrid 4G/5G V2X approximation: per class, groups in ascending demand key
/// take best-fitting RBs from the same-shape outer pool, the combinatorial
/// outer pool, then fresh dual-layer RBs, and finally bridge mismatched inner
/// RBs. Placements are never moved once made.
pub fn allocate_h45v(inst: &AllocationInstance) -> AllocationResult {
    let start = Instant::now();
    let ctx = PowerCtx::new(inst);
    let mut grid = inst.grid.clone();
    let mut served = vec![0u64; inst.groups.len()];
    let mut picks = 0u64;
    for priority in Priority::ORDER {
        for gi in inst.class_order(priority) {
            let g = &inst.groups[gi];
            if g.bits == 0 {
                continue;
            }
            if grid.is_full(Layer::Outer) {
                break;
            }
            let mut remaining = g.bits;
            let mut kinds = vec![Pool::Same, Pool::Combined, Pool::Fresh];
            if g.shape == RbGeometry::LowLatency {
                kinds.push(Pool::Bridge);
            }
            for kind in kinds {
                if remaining == 0 {
                    break;
                }
                let mut entries = pool(&grid, g.shape, kind);
                let mut ideal = ideal_capacity(&ctx, gi, remaining);
                let mut tops: Vec<Option<u8>> = vec![None; entries.len()];
                while remaining > 0 && !entries.is_empty() {
                    let mut fit = BestFit::new(remaining);
                    for (i, &anchor) in entries.iter().enumerate() {
                        let top =
                            *tops[i].get_or_insert_with(|| top_mcs(&ctx, &grid, gi, kind, anchor));
                        if top == 0 {
                            continue;
                        }
                        let cap = inst.rb_bits(fit_mcs(inst, top, remaining));
                        if cap == 0 {
                            continue;
                        }
                        fit.offer(i, cap);
                        if cap == ideal {
                            break;
                        }
                    }
                    let Some(i) = fit.pick() else {
                        break;
                    };
                    let mcs = fit_mcs(inst, tops[i].unwrap_or(0), remaining);
                    let cap = inst.rb_bits(mcs);
                    let anchor = entries.remove(i);
                    tops.remove(i);
                    let touched: Option<(usize, usize)> = match kind {
                        Pool::Fresh => ctx
                            .place_inner(&mut grid, gi, mcs, anchor)
                            .map(|_| span(&g.shape.fractions(anchor))),
                        _ => ctx.place_outer(&mut grid, gi, mcs, anchor).map(|undo| {
                            let mut touched = span(&g.shape.fractions(anchor));
                            for (id, _, _) in &undo.bumps {
                                if let Some(p) = grid.get(*id) {
                                    let (lo, hi) = span(&p.placement.fractions());
                                    touched = (touched.0.min(lo), touched.1.max(hi));
                                }
                            }
                            touched
                        }),
                    };
                    if let Some((lo, hi)) = touched {
                        for (e, t) in entries.iter().zip(tops.iter_mut()) {
                            if e.subchannel + 2 >= lo && e.subchannel <= hi + 2 {
                                *t = None;
                            }
                        }
                        picks += 1;
                        served[gi] += cap;
                        remaining = remaining.saturating_sub(cap);
                        ideal = ideal_capacity(&ctx, gi, remaining);
                    }
                }
            }
        }
    }
    let placements: Vec<_> = grid
        .placements()
        .filter(|p| inst.grid.get(p.id).is_none())
        .map(|p| p.placement)
        .collect();
    AllocationResult {
        objective: Objective::evaluate(&inst.groups, &served),
        placements,
        served,
        stats: SolverStats {
            nodes: picks,
            wall: start.elapsed(),
            optimal: false,
        },
        grid,
    }
}

/// Subchannel range covered by `frs`.
fn span(frs: &[FractionIndex; 2]) -> (usize, usize) {
    let (a, b) = (frs[0].subchannel, frs[1].subchannel);
    (a.min(b), a.max(b))
}

/// Highest MCS the group could use at `anchor` from pool `kind`.
fn top_mcs(
    ctx: &PowerCtx<'_>,
    grid: &ResourceGrid,
    gi: usize,
    kind: Pool,
    anchor: FractionIndex,
) -> u8 {
    match kind {
        Pool::Fresh => match ctx.inner_site(grid, gi, anchor) {
            Some(site) => ctx.max_feasible_mcs(|m| ctx.inner_site_plan(&site, m).is_some()),
            None => 0,
        },
        _ => match ctx.outer_site(grid, gi, anchor) {
            Some(site) => ctx.max_feasible_mcs(|m| ctx.outer_site_fits(&site, m)),
            None => 0,
        },
    }
}

/// MCS at or below `top` whose RB capacity best fits `demand`: the lowest
/// index covering it, else `top`.
fn fit_mcs(inst: &AllocationInstance, top: u8, demand: u64) -> u8 {
    if inst.rb_bits(top) < demand {
        return top;
    }
    let covering = (1..=top).find(|&m| inst.rb_bits(m) >= demand);
    covering.unwrap_or(top)
}

/// The best capacity any location could offer the group: reaching it ends
/// the scan early.
fn ideal_capacity(ctx: &PowerCtx<'_>, gi: usize, demand: u64) -> u64 {
    let inst = ctx.inst;
    let g = &inst.groups[gi];
    let top = inst.mcs.mcs_from_sinr_linear(g.best_gain()).cqi_index;
    if top == 0 {
        return u64::MAX;
    }
    inst.rb_bits(fit_mcs(inst, top, demand))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::GroupDemand;
    use crate::grid::Direction;
    use crate::ids::{ApId, GroupId};
    use crate::radio::{McsEntry, McsTable};
    use std::sync::Arc;

    fn table() -> Arc<McsTable> {
        let e = |i, s, b| McsEntry {
            cqi_index: i,
            min_sinr_db: s,
            bits_per_fraction: b,
        };
        Arc::new(
            McsTable::from_entries(vec![
                e(0, f64::NEG_INFINITY, 0),
                e(1, 0.0, 50),
                e(2, 10.0, 100),
            ])
            .unwrap(),
        )
    }

    fn group(id: u32, bits: u64, shape: RbGeometry, gain: f64, n: usize) -> GroupDemand {
        GroupDemand {
            group_id: GroupId(id),
            priority: Priority::Normal,
            bits,
            fair: 1.0,
            size: 1,
            shape,
            gains: vec![gain; n],
        }
    }

    fn inst(n: usize, groups: Vec<GroupDemand>) -> AllocationInstance {
        AllocationInstance::new(
            ResourceGrid::with_subchannels(ApId(0), Direction::Downlink, n),
            groups,
            table(),
        )
        .unwrap()
    }

    #[test]
    fn single_small_demand_takes_one_fresh_rb() {
        let i = inst(4, vec![group(1, 150, RbGeometry::Normal, 1000.0, 4)]);
        let r = allocate_h45v(&i);
        assert_eq!(r.placements.len(), 1);
        assert_eq!(r.placements[0].layer, Layer::Inner);
        assert_eq!(r.placements[0].mcs, 2);
        assert_eq!(r.served, vec![200]);
        r.verify(&i).unwrap();
    }

    #[test]
    fn two_groups_share_one_location() {
        // Inner: 200 bits at SINR 10 needs p = 10/1000 = 0.01. The outer
        // group then has residual power ~0.99 but the inner must stay
        // decodable: p0 >= 10 (p1 + 1/1000), so p1 <= ~0.089 and its SINR is
        // <= 0.089 * 50 = 4.5 -> MCS 1.
        let i = inst(
            1,
            vec![
                group(1, 200, RbGeometry::Normal, 1000.0, 1),
                group(2, 400, RbGeometry::Normal, 50.0, 1),
            ],
        );
        let r = allocate_h45v(&i);
        assert_eq!(r.placements.len(), 2);
        let a = r
            .placements
            .iter()
            .find(|p| p.group_id == GroupId(1))
            .unwrap();
        let b = r
            .placements
            .iter()
            .find(|p| p.group_id == GroupId(2))
            .unwrap();
        assert_eq!((a.layer, a.mcs), (Layer::Inner, 2));
        assert_eq!((b.layer, b.mcs), (Layer::Outer, 1));
        r.verify(&i).unwrap();
        let grid = &r.grid;
        let f = FractionIndex::new(0, 0);
        let (p0, p1) = (
            grid.layer_power(f, Layer::Inner).as_fraction(),
            grid.layer_power(f, Layer::Outer).as_fraction(),
        );
        assert!(p0 * 1000.0 / (p1 * 1000.0 + 1.0) >= 10.0 - 1e-9);
        assert!(p1 * 50.0 >= 1.0 - 1e-9);
        assert_eq!(r.served, vec![200, 100]);
    }

    #[test]
    fn low_latency_demand_bridges_normal_pair() {
        let mut g0 = ResourceGrid::with_subchannels(ApId(0), Direction::Downlink, 2);
        for s in 0..2 {
            g0.place(crate::grid::RbPlacement {
                group_id: GroupId(10 + s as u32),
                layer: Layer::Inner,
                mcs: 1,
                geometry: RbGeometry::Normal,
                anchor: FractionIndex::new(s, 0),
                power: PowerShare::from_fraction_ceil(0.01).unwrap(),
            })
            .unwrap();
        }
        let mut groups = vec![group(1, 100, RbGeometry::LowLatency, 1000.0, 2)];
        // Existing inner RBs belong to known groups with no remaining demand.
        groups.push(group(10, 0, RbGeometry::Normal, 1000.0, 2));
        groups.push(group(11, 0, RbGeometry::Normal, 1000.0, 2));
        let i = AllocationInstance::new(g0, groups, table()).unwrap();
        let r = allocate_h45v(&i);
        assert_eq!(r.placements.len(), 1);
        let p = r.placements[0];
        assert_eq!(
            (p.layer, p.geometry, p.anchor.subchannel),
            (Layer::Outer, RbGeometry::LowLatency, 0)
        );
        r.verify(&i).unwrap();
        let grid = &r.grid;
        assert!(grid.placements().any(|x| x.bridged));
    }

    #[test]
    fn zero_demand_is_skipped() {
        let i = inst(2, vec![group(1, 0, RbGeometry::Normal, 10.0, 2)]);
        let r = allocate_h45v(&i);
        assert!(r.placements.is_empty());
        assert!(r.objective.served_fraction().is_infinite());
    }
}
