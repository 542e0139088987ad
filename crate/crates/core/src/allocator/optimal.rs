use super::power::PowerCtx;
use super::{allocate_h45v, AllocationInstance, AllocationResult, Objective, SolverStats};
use crate::grid::{FractionIndex, Layer, RbGeometry, RbPlacement, ResourceGrid};
use crate::traffic::Priority;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Search nodes before the solve stops with the best result so far.
    pub node_budget: u64,
    pub time_budget: Option<Duration>,
    /// Seed the search with the block-coordinate and H45V solutions.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            node_budget: 5_000_000,
            time_budget: None,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Loc {
    layer: Layer,
    geometry: RbGeometry,
    anchor: FractionIndex,
}

struct Incumbent {
    objective: Objective,
    served: Vec<u64>,
    grid: ResourceGrid,
}

struct Search<'a> {
    ctx: PowerCtx<'a>,
    locs: Vec<Loc>,
    /// Per location: `(group, mcs, bits)` in exploration order.
    options: Vec<Vec<(usize, u8, u64)>>,
    /// `suffix[k][g]`: optimistic bits group `g` could still collect from
    /// locations `k..`.
    suffix: Vec<Vec<u64>>,
    grid: ResourceGrid,
    served: Vec<u64>,
    best: Option<Incumbent>,
    nodes: u64,
    cfg: SolverConfig,
    started: Instant,
    aborted: bool,
}

impl<'a> Search<'a> {
    fn new(
        inst: &'a AllocationInstance,
        grid: ResourceGrid,
        served: Vec<u64>,
        layers: &[Layer],
        class: Option<Priority>,
        cfg: SolverConfig,
    ) -> Self {
        let ctx = PowerCtx::new(inst);
        let active: Vec<usize> = (0..inst.groups.len())
            .filter(|&g| class.is_none_or(|c| inst.groups[g].priority == c))
            .collect();
        let mut shapes: Vec<RbGeometry> = active.iter().map(|&g| inst.groups[g].shape).collect();
        shapes.sort();
        shapes.dedup();
        let mut locs = Vec::new();
        for &layer in layers {
            let mut here: Vec<Loc> = shapes
                .iter()
                .flat_map(|&geometry| {
                    geometry
                        .anchors(grid.subchannels())
                        .into_iter()
                        .map(move |anchor| Loc {
                            layer,
                            geometry,
                            anchor,
                        })
                })
                .collect();
            here.sort_by_key(|l| (l.anchor.flat(), l.geometry));
            locs.extend(here);
        }
        let n = inst.groups.len();
        let mut options = Vec::with_capacity(locs.len());
        let mut optimistic = Vec::with_capacity(locs.len());
        for loc in &locs {
            let frs = loc.geometry.fractions(loc.anchor);
            let mut opts = Vec::new();
            let mut best = vec![0u64; n];
            for &g in &active {
                let gd = &inst.groups[g];
                if gd.shape != loc.geometry {
                    continue;
                }
                let top = inst.mcs.mcs_from_sinr_linear(gd.gain_over(&frs)).cqi_index;
                for m in 1..=top {
                    let bits = inst.rb_bits(m);
                    if bits > 0 {
                        opts.push((g, m, bits));
                        best[g] = best[g].max(bits);
                    }
                }
            }
            opts.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            options.push(opts);
            optimistic.push(best);
        }
        let mut suffix = vec![vec![0u64; n]; locs.len() + 1];
        for k in (0..locs.len()).rev() {
            for g in 0..n {
                suffix[k][g] = suffix[k + 1][g] + optimistic[k][g];
            }
        }
        Self {
            ctx,
            locs,
            options,
            suffix,
            grid,
            served,
            best: None,
            nodes: 0,
            cfg,
            started: Instant::now(),
            aborted: false,
        }
    }

    fn offer(&mut self, objective: Objective, served: &[u64], grid: &ResourceGrid) {
        if self.best.as_ref().is_none_or(|b| objective > b.objective) {
            self.best = Some(Incumbent {
                objective,
                served: served.to_vec(),
                grid: grid.clone(),
            });
        }
    }

    fn out_of_budget(&mut self) -> bool {
        if self.nodes >= self.cfg.node_budget {
            self.aborted = true;
        }
        if let Some(t) = self.cfg.time_budget {
            if self.nodes.is_multiple_of(1024) && self.started.elapsed() > t {
                self.aborted = true;
            }
        }
        self.aborted
    }

    fn run(&mut self, k: usize) {
        if self.aborted || self.out_of_budget() {
            return;
        }
        self.nodes += 1;
        let groups = &self.ctx.inst.groups;
        if let Some(best) = &self.best {
            let ub: Vec<u64> = (0..groups.len())
                .map(|g| self.served[g] + self.suffix[k][g])
                .collect();
            if Objective::evaluate(groups, &ub) <= best.objective {
                return;
            }
        }
        if k == self.locs.len() {
            let objective = Objective::evaluate(groups, &self.served);
            let (served, grid) = (self.served.clone(), self.grid.clone());
            self.offer(objective, &served, &grid);
            return;
        }
        let loc = self.locs[k];
        for i in 0..self.options[k].len() {
            let (g, mcs, bits) = self.options[k][i];
            // A satisfied group can still lend the cheapest inner RB as the
            // base of another group's outer RB.
            if self.served[g] >= self.ctx.inst.groups[g].bits
                && (loc.layer == Layer::Outer
                    || self.options[k].iter().any(|o| o.0 == g && o.1 < mcs))
            {
                continue;
            }
            match loc.layer {
                Layer::Inner => {
                    let Some(id) = self.ctx.place_inner(&mut self.grid, g, mcs, loc.anchor) else {
                        continue;
                    };
                    self.served[g] += bits;
                    self.run(k + 1);
                    self.served[g] -= bits;
                    self.grid.remove(id).expect("placed above");
                }
                Layer::Outer => {
                    let Some(undo) = self.ctx.place_outer(&mut self.grid, g, mcs, loc.anchor)
                    else {
                        continue;
                    };
                    self.served[g] += bits;
                    self.run(k + 1);
                    self.served[g] -= bits;
                    PowerCtx::undo_outer(&mut self.grid, &undo);
                }
            }
            if self.aborted {
                return;
            }
        }
        self.run(k + 1);
    }
}

fn finish(inst: &AllocationInstance, search: Search<'_>, start: Instant) -> AllocationResult {
    let nodes = search.nodes;
    let optimal = !search.aborted;
    let best = search.best.expect("the empty assignment is always offered");
    let placements = best
        .grid
        .placements()
        .filter(|p| inst.grid.get(p.id).is_none())
        .map(|p| p.placement)
        .collect::<Vec<RbPlacement>>();
    AllocationResult {
        placements,
        served: best.served,
        objective: best.objective,
        stats: SolverStats {
            nodes,
            wall: start.elapsed(),
            optimal,
        },
        grid: best.grid,
    }
}

fn stage(
    inst: &AllocationInstance,
    served: Vec<u64>,
    layer: Layer,
    class: Priority,
    cfg: SolverConfig,
) -> AllocationResult {
    let start = Instant::now();
    let mut search = Search::new(inst, inst.grid.clone(), served, &[layer], Some(class), cfg);
    let (s, g) = (search.served.clone(), search.grid.clone());
    search.offer(Objective::evaluate(&inst.groups, &s), &s, &g);
    search.run(0);
    finish(inst, search, start)
}

/// Inner-layer sub-problem for one class over the instance's grid: each RB
/// may take up to the whole residual power.
pub fn solve_inner(
    inst: &AllocationInstance,
    class: Priority,
    cfg: SolverConfig,
) -> AllocationResult {
    stage(inst, vec![0; inst.groups.len()], Layer::Inner, class, cfg)
}

/// Outer-layer sub-problem for one class over the frozen inner RBs already
/// on the instance's grid. `served` carries what earlier stages delivered.
pub fn solve_outer(
    inst: &AllocationInstance,
    class: Priority,
    served: &[u64],
    cfg: SolverConfig,
) -> AllocationResult {
    stage(inst, served.to_vec(), Layer::Outer, class, cfg)
}

/// Block-coordinate pass: inner then outer layer per class, each stage
/// solved exactly and frozen for the next.
fn block_coordinate(inst: &AllocationInstance, cfg: SolverConfig) -> AllocationResult {
    let start = Instant::now();
    let mut cur = inst.clone();
    let mut served = vec![0u64; inst.groups.len()];
    let mut nodes = 0;
    let mut optimal = true;
    for class in Priority::ORDER {
        for layer in [Layer::Inner, Layer::Outer] {
            let r = stage(&cur, served.clone(), layer, class, cfg);
            nodes += r.stats.nodes;
            optimal &= r.stats.optimal;
            served = r.served;
            cur.grid = r.grid;
        }
    }
    let placements = cur
        .grid
        .placements()
        .filter(|p| inst.grid.get(p.id).is_none())
        .map(|p| p.placement)
        .collect();
    AllocationResult {
        placements,
        objective: Objective::evaluate(&inst.groups, &served),
        served,
        stats: SolverStats {
            nodes,
            wall: start.elapsed(),
            optimal,
        },
        grid: cur.grid,
    }
}

/// Exact lexicographic max-min allocation.
///
/// Depth-first branch and bound over every layer-0 then layer-1 location,
/// choosing a `(group, mcs)` or nothing at each; an optimistic per-group bound
/// prunes subtrees that cannot beat the incumbent. Higher-class RBs are not
/// pinned to earlier locations: the whole instance is searched jointly under
/// the High-then-Normal lexicographic order. A budget cut returns the best
/// result found with `stats.optimal == false`.
pub fn solve_optimal(inst: &AllocationInstance, cfg: SolverConfig) -> AllocationResult {
    let start = Instant::now();
    let n = inst.groups.len();
    let mut search = Search::new(
        inst,
        inst.grid.clone(),
        vec![0; n],
        &[Layer::Inner, Layer::Outer],
        None,
        cfg,
    );
    let empty = vec![0u64; n];
    search.offer(
        Objective::evaluate(&inst.groups, &empty),
        &empty,
        &inst.grid,
    );
    if cfg.warm_start && n > 0 {
        for r in [block_coordinate(inst, cfg), allocate_h45v(inst)] {
            search.nodes += r.stats.nodes;
            search.offer(r.objective, &r.served, &r.grid);
        }
        search.nodes = 0;
    }
    search.run(0);
    finish(inst, search, start)
}
