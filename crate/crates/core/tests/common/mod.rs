#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use v2xsim::allocator::{
    allocate_h45v, solve_optimal, AllocationInstance, AllocationResult, Objective, RandomInstance,
    SolverConfig,
};
use v2xsim::grid::{
    Direction, FractionIndex, Layer, PowerShare, RbGeometry, RbPlacement, ResourceGrid,
};
use v2xsim::ids::{ApId, GroupId};
use v2xsim::radio::p_min_linear;

/// Oracle-sized instances: at most three subchannels (six fractions, ten
/// locations), four groups and two MCS levels.
pub fn oracle_instances(count: usize, seed: u64) -> Vec<AllocationInstance> {
    let spec = RandomInstance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| spec.generate(&mut rng)).collect()
}

/// Credited bits over all classes.
pub fn credited(obj: &Objective) -> u64 {
    obj.classes.iter().map(|c| c.total_bits).sum()
}

/// Total demand over the instance's top-MCS two-layer capacity.
pub fn load(inst: &AllocationInstance) -> f64 {
    let demand: u64 = inst.groups.iter().map(|g| g.bits).sum();
    let capacity = inst.grid.subchannels() as u64 * 2 * inst.rb_bits(inst.mcs.top().cqi_index);
    demand as f64 / capacity as f64
}

#[derive(Clone, Copy)]
struct Rb {
    group: usize,
    mcs: u8,
    layer: Layer,
    geometry: RbGeometry,
    anchor: FractionIndex,
}

impl Rb {
    fn fractions(&self) -> [FractionIndex; 2] {
        self.geometry.fractions(self.anchor)
    }
}

fn flat(f: FractionIndex) -> usize {
    f.subchannel * 2 + f.slot
}

/// Minimum power: outer RBs see only noise, inner RBs see the strongest outer
/// RB above them as interference. `None` if any fraction overflows.
fn powers(inst: &AllocationInstance, rbs: &[Rb]) -> Option<Vec<u32>> {
    let mut out = vec![0u32; rbs.len()];
    let mut outer_at = vec![0u32; inst.grid.fraction_count()];
    for (i, rb) in rbs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.layer == Layer::Outer)
    {
        let g = &inst.groups[rb.group];
        let p = p_min_linear(
            inst.mcs.threshold(rb.mcs),
            g.gain_over(&rb.fractions()),
            0.0,
            1.0,
        )
        .feasible()
        .and_then(PowerShare::from_fraction_ceil)?;
        out[i] = p.units();
        for f in rb.fractions() {
            outer_at[flat(f)] = p.units();
        }
    }
    for (i, rb) in rbs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.layer == Layer::Inner)
    {
        let g = &inst.groups[rb.group];
        let gain = g.gain_over(&rb.fractions());
        let above = rb
            .fractions()
            .iter()
            .map(|f| outer_at[flat(*f)])
            .max()
            .unwrap_or(0);
        let interference = PowerShare::from_units(above).as_fraction() * gain;
        let p = p_min_linear(inst.mcs.threshold(rb.mcs), gain, interference, 1.0)
            .feasible()
            .and_then(PowerShare::from_fraction_ceil)?;
        if p.is_zero() || p.units() as u64 + above as u64 > PowerShare::SCALE as u64 {
            return None;
        }
        out[i] = p.units();
    }
    Some(out)
}

struct Brute<'a> {
    inst: &'a AllocationInstance,
    locs: Vec<(Layer, RbGeometry, FractionIndex)>,
    /// Occupant per fraction and layer: index into `rbs`.
    cells: Vec<[Option<usize>; 2]>,
    rbs: Vec<Rb>,
    served: Vec<u64>,
    best: Objective,
    leaves: u64,
}

impl Brute<'_> {
    fn fits(&self, rb: &Rb) -> bool {
        let frs = rb.fractions();
        if frs
            .iter()
            .any(|f| self.cells[flat(*f)][rb.layer.index()].is_some())
        {
            return false;
        }
        if rb.layer == Layer::Inner {
            return true;
        }
        frs.iter().all(|f| match self.cells[flat(*f)][0] {
            None => false,
            Some(i) => {
                let under = self.rbs[i].geometry;
                under == rb.geometry
                    || (rb.geometry == RbGeometry::LowLatency && under == RbGeometry::Normal)
            }
        })
    }

    fn go(&mut self, k: usize) {
        if k == self.locs.len() {
            self.leaves += 1;
            let obj = Objective::evaluate(&self.inst.groups, &self.served);
            if obj > self.best {
                self.best = obj;
            }
            return;
        }
        self.go(k + 1);
        let (layer, geometry, anchor) = self.locs[k];
        for group in 0..self.inst.groups.len() {
            if self.inst.groups[group].shape != geometry {
                continue;
            }
            for entry in self
                .inst
                .mcs
                .entries()
                .iter()
                .filter(|e| e.bits_per_fraction > 0)
            {
                let rb = Rb {
                    group,
                    mcs: entry.cqi_index,
                    layer,
                    geometry,
                    anchor,
                };
                if !self.fits(&rb) {
                    continue;
                }
                self.rbs.push(rb);
                if powers(self.inst, &self.rbs).is_some() {
                    let idx = self.rbs.len() - 1;
                    for f in rb.fractions() {
                        self.cells[flat(f)][layer.index()] = Some(idx);
                    }
                    let bits = self.inst.rb_bits(rb.mcs);
                    self.served[group] += bits;
                    self.go(k + 1);
                    self.served[group] -= bits;
                    for f in rb.fractions() {
                        self.cells[flat(f)][layer.index()] = None;
                    }
                }
                self.rbs.pop();
            }
        }
    }
}

/// Exhaustive optimum over every inner-then-outer assignment of
/// `(group, mcs)` or nothing to every aligned location of an empty grid,
/// with closed-form minimum powers. Returns the objective and the number of
/// complete assignments scored.
pub fn brute_force(inst: &AllocationInstance) -> (Objective, u64) {
    assert_eq!(
        inst.grid.placements().count(),
        0,
        "brute force starts from an empty grid"
    );
    let n = inst.grid.subchannels();
    let mut locs = Vec::new();
    for layer in [Layer::Inner, Layer::Outer] {
        for geometry in [RbGeometry::Normal, RbGeometry::LowLatency] {
            for s in 0..n {
                for slot in 0..2 {
                    let a = FractionIndex::new(s, slot);
                    let aligned = match geometry {
                        RbGeometry::Normal => slot == 0,
                        RbGeometry::LowLatency => s % 2 == 0 && s + 1 < n,
                    };
                    if aligned {
                        locs.push((layer, geometry, a));
                    }
                }
            }
        }
    }
    let mut b = Brute {
        inst,
        locs,
        cells: vec![[None; 2]; n * 2],
        rbs: Vec::new(),
        served: vec![0; inst.groups.len()],
        best: Objective::evaluate(&inst.groups, &vec![0; inst.groups.len()]),
        leaves: 0,
    };
    b.go(0);
    (b.best, b.leaves)
}

/// Grid invariants recomputed from the placement list alone: one placement
/// per fraction and layer, power in (0, 1] summing to at most 1 per
/// fraction, matching geometries across layers except a low-latency outer RB
/// bridging two normal inner RBs, and outer RBs fully over or fully off the
/// inner layer.
pub fn grid_invariants(grid: &ResourceGrid) -> Result<(), String> {
    let n = grid.fraction_count();
    let mut cells: Vec<[Option<(RbGeometry, u32)>; 2]> = vec![[None; 2]; n];
    for p in grid.placements() {
        let rb = &p.placement;
        if rb.power.is_zero() || rb.power > PowerShare::FULL {
            return Err(format!("power {} out of range", rb.power));
        }
        for f in rb.fractions() {
            if !grid.in_bounds(f) {
                return Err(format!("fraction {f} outside the grid"));
            }
            let cell = &mut cells[flat(f)][rb.layer.index()];
            if cell.is_some() {
                return Err(format!("overlap at {f} layer {}", rb.layer.index()));
            }
            *cell = Some((rb.geometry, rb.power.units()));
        }
    }
    for (i, c) in cells.iter().enumerate() {
        let units: u64 = c.iter().flatten().map(|(_, u)| *u as u64).sum();
        if units > PowerShare::SCALE as u64 {
            return Err(format!("fraction {i} carries {units} units"));
        }
        if let [Some((inner, _)), Some((outer, _))] = c {
            if inner != outer && !(*outer == RbGeometry::LowLatency && *inner == RbGeometry::Normal)
            {
                return Err(format!("fraction {i} mixes {inner} under {outer}"));
            }
        }
    }
    for p in grid
        .placements()
        .filter(|p| p.placement.layer == Layer::Outer)
    {
        let under = p
            .placement
            .fractions()
            .iter()
            .filter(|f| cells[flat(**f)][0].is_some())
            .count();
        if under == 1 {
            return Err(format!(
                "outer RB at {} half over the inner layer",
                p.placement.anchor
            ));
        }
    }
    Ok(())
}

/// Every allocated RB meets its MCS threshold at its recorded power, and
/// every outer RB stands on inner RBs.
pub fn sinr_ok(inst: &AllocationInstance, r: &AllocationResult) -> Result<(), String> {
    let index = inst.index_of();
    for p in r.grid.placements() {
        let rb = &p.placement;
        let Some(&gi) = index.get(&rb.group_id) else {
            continue;
        };
        let frs = rb.fractions();
        let gain = inst.groups[gi].gain_over(&frs);
        let power = rb.power.as_fraction();
        let sinr = match rb.layer {
            Layer::Outer => {
                if frs
                    .iter()
                    .any(|f| r.grid.occupant(*f, Layer::Inner).is_none())
                {
                    return Err(format!(
                        "outer RB at {} over an empty inner layer",
                        rb.anchor
                    ));
                }
                power * gain
            }
            Layer::Inner => {
                let above = frs
                    .iter()
                    .map(|f| r.grid.layer_power(*f, Layer::Outer).as_fraction())
                    .fold(0.0, f64::max);
                power * gain / (1.0 + above * gain)
            }
        };
        if sinr < inst.mcs.threshold(rb.mcs) {
            return Err(format!("RB at {} runs below its MCS threshold", rb.anchor));
        }
    }
    Ok(())
}

/// Mann-Kendall trend test; returns the two-sided p-value under the normal
/// approximation with tie correction.
pub fn mann_kendall(x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match x[j].partial_cmp(&x[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = match s {
        0 => 0.0,
        s if s > 0 => (s as f64 - 1.0) / var.sqrt(),
        s => (s as f64 + 1.0) / var.sqrt(),
    };
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    2.0 * (1.0 - std.cdf(z.abs()))
}

pub const SEQUENCES: usize = 100_000;
pub const ROUNDS: usize = 1_000;

fn random_placement(rng: &mut impl Rng, subchannels: usize) -> RbPlacement {
    let geometry = if rng.random_bool(0.4) {
        RbGeometry::LowLatency
    } else {
        RbGeometry::Normal
    };
    // Anchors are drawn slightly out of range so misaligned and
    // out-of-bounds requests are exercised too.
    let anchor = FractionIndex::new(rng.random_range(0..subchannels + 1), rng.random_range(0..2));
    let power = match rng.random_range(0..10) {
        0 => 0,
        1 => PowerShare::SCALE,
        _ => rng.random_range(1..=PowerShare::SCALE / 2),
    };
    RbPlacement {
        group_id: GroupId(rng.random_range(0..4)),
        layer: if rng.random_bool(0.5) {
            Layer::Outer
        } else {
            Layer::Inner
        },
        mcs: rng.random_range(1..=15),
        geometry,
        anchor,
        power: PowerShare::from_units(power),
    }
}

#[derive(Debug, Default)]
pub struct FuzzTally {
    pub ops: usize,
    pub accepted: usize,
    pub faults: usize,
}

/// Runs `count` random place/remove sequences, counting operations that left
/// a violated invariant or a partially changed grid.
pub fn fuzz_sequences(count: usize, seed: u64) -> FuzzTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = FuzzTally::default();
    for _ in 0..count {
        let n = rng.random_range(1..=6);
        let mut grid = ResourceGrid::with_subchannels(ApId(0), Direction::Downlink, n);
        for _ in 0..rng.random_range(1..=12) {
            let before = grid.clone();
            let accepted = if rng.random_bool(0.7) || grid.placements().count() == 0 {
                grid.place(random_placement(&mut rng, n)).is_ok()
            } else {
                let k = rng.random_range(0..grid.placements().count());
                let id = grid.placements().nth(k).expect("k in range").id;
                grid.remove(id).is_ok()
            };
            t.ops += 1;
            t.accepted += accepted as usize;
            if !accepted && grid != before {
                t.faults += 1;
            }
            if grid_invariants(&grid).is_err() || grid.validate().is_err() {
                t.faults += 1;
            }
        }
    }
    t
}

/// Runs `count` allocation rounds (both solvers on oracle-sized instances,
/// H45V alone on wider ones) and returns the number of rejected results.
pub fn fuzz_rounds(count: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = oracle_instances(count / 2, seed);
    let mut faults = 0;
    let mut check = |inst: &AllocationInstance, r: &AllocationResult| {
        if r.verify(inst).is_err() || grid_invariants(&r.grid).is_err() || sinr_ok(inst, r).is_err()
        {
            faults += 1;
        }
    };
    for inst in &small {
        check(inst, &allocate_h45v(inst));
        check(inst, &solve_optimal(inst, SolverConfig::default()));
    }
    for _ in small.len()..count {
        let n = rng.random_range(4..=50);
        let inst = RandomInstance::scaled(n).generate(&mut rng);
        check(&inst, &allocate_h45v(&inst));
    }
    faults
}

/// Random `(prev, bits, t_c)` triples whose update leaves the closed
/// interval spanned by `prev` and `bits`.
pub fn fairness_bound_violations(count: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .filter(|_| {
            let prev = rng.random_range(0.0..1e8);
            let bits = rng.random_range(0.0..1e8);
            let t_c = rng.random_range(1.0..1e4);
            let f = v2xsim::traffic::fairness_update(prev, bits, t_c);
            f < prev.min(bits) || f > prev.max(bits)
        })
        .count()
}

/// Relative distance to a constant input `bits` after `5 t_c` epochs from
/// `start`.
pub fn fairness_settle_error(t_c: f64, start: f64, bits: f64) -> f64 {
    let epochs = (5.0 * t_c).ceil() as usize;
    let f = (0..epochs).fold(start, |f, _| v2xsim::traffic::fairness_update(f, bits, t_c));
    (f - bits).abs() / bits
}

/// `(G·M)² log(G·M)`.
pub fn complexity_model(n: usize) -> f64 {
    let n = n as f64;
    n * n * n.ln()
}

#[derive(Debug)]
pub struct ComplexityFit {
    /// `(n, mean seconds per instance)`.
    pub points: Vec<(usize, f64)>,
    /// Fitted constant: geometric mean of time over model.
    pub scale: f64,
    /// Largest factor by which a point strays from the fitted curve.
    pub band: f64,
}

/// H45V wall time on random instances of `n` groups over an `n`-subchannel
/// grid, each timed as the best of `reps` repetitions.
pub fn complexity_fit(sizes: &[usize], instances: usize, reps: usize, seed: u64) -> ComplexityFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(usize, f64)> = sizes
        .iter()
        .map(|&n| {
            let spec = RandomInstance::scaled(n);
            let total: f64 = (0..instances)
                .map(|_| {
                    let inst = spec.generate(&mut rng);
                    (0..reps)
                        .map(|_| {
                            let t = std::time::Instant::now();
                            std::hint::black_box(allocate_h45v(&inst));
                            t.elapsed().as_secs_f64()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            (n, total / instances as f64)
        })
        .collect();
    let logs: Vec<f64> = points
        .iter()
        .map(|&(n, t)| (t / complexity_model(n)).ln())
        .collect();
    let scale = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    let band = points
        .iter()
        .map(|&(n, t)| {
            let r = t / (scale * complexity_model(n));
            r.max(1.0 / r)
        })
        .fold(1.0, f64::max);
    ComplexityFit {
        points,
        scale,
        band,
    }
}

pub struct QueueRun {
    pub log: Vec<v2xsim::sim::MetricsRecord>,
    /// Jobs waiting at the base station (both directions), sampled per
    /// subframe.
    pub backlog: Vec<usize>,
    /// Service rate of the slower direction, bits per busy second.
    pub mu: f64,
}

pub const FEED_VEHICLES: usize = 20;
pub const FEED_BYTES: u32 = 1000;

/// One base station, `FEED_VEHICLES` parked vehicles in one group, and a
/// Poisson feed of fixed-size General flows at `rate_pps` per vehicle.
pub fn queue_feed(rate_pps: f64, duration_s: f64, seed: u64) -> QueueRun {
    use std::sync::Arc;
    use v2xsim::radio::McsTable;
    use v2xsim::sim::{ApClass, DeploymentMode, Engine, SimConfig, Timeline, Topology};
    use v2xsim::traffic::TrafficProfile;
    let topo = Topology::new(
        &[v2xsim::radio::Position::new(0.0, 0.0)],
        ApClass::macrocell(),
        &[],
        ApClass::roadside(),
    )
    .expect("single base station");
    let mut tl = Timeline::new();
    for v in 0..FEED_VEHICLES {
        let p = v2xsim::radio::Position::new(150.0 + v as f64, 0.0);
        tl.push(v2xsim::ids::VehicleId(v as u32), 0.0, p)
            .expect("one sample");
    }
    let cfg = SimConfig {
        mode: DeploymentMode::Mc,
        seed,
        duration_s,
        shadowing_db: 0.0,
        drain: false,
        critical: TrafficProfile {
            rate_pps: 0.0,
            ..TrafficProfile::critical()
        },
        general: TrafficProfile {
            rate_pps,
            min_bytes: FEED_BYTES,
            max_bytes: FEED_BYTES,
            avg_bytes: FEED_BYTES as f64,
            ..TrafficProfile::general()
        },
        ..SimConfig::default()
    };
    let mut e = Engine::new(cfg, topo, tl, Arc::new(McsTable::default())).expect("valid engine");
    let bs = v2xsim::ids::ApId(0);
    let mut backlog = Vec::new();
    while e.running() {
        e.step();
        backlog.push(e.queue(bs, Direction::Uplink).len() + e.queue(bs, Direction::Downlink).len());
    }
    let mu = e
        .queue(bs, Direction::Uplink)
        .mu()
        .min(e.queue(bs, Direction::Downlink).mu());
    QueueRun {
        log: e.finish().log,
        backlog,
        mu,
    }
}

/// Per-vehicle rate that offers `rho` times the saturated service rate of
/// the bottleneck direction.
pub fn feed_rate_for(rho: f64) -> f64 {
    let saturated = queue_feed(5000.0, 0.5, 99);
    rho * saturated.mu / (FEED_BYTES as f64 * 8.0 * FEED_VEHICLES as f64)
}

pub fn window_means(x: &[f64], windows: usize) -> Vec<f64> {
    let w = x.len() / windows;
    (0..windows)
        .map(|i| x[i * w..(i + 1) * w].iter().sum::<f64>() / w as f64)
        .collect()
}

pub const FEED_SECONDS: f64 = 4.0;

/// Mann-Kendall p-value of 40 windowed means of `queue_ms` in creation
/// order, and the number of increases across 10 windows of the sampled
/// backlog (each against the preceding window).
pub fn queue_law(rho: f64, seed: u64) -> (f64, usize) {
    let r = queue_feed(feed_rate_for(rho), FEED_SECONDS, seed);
    let mut rows: Vec<_> = r.log.iter().map(|x| (x.created_s, x.queue_ms)).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let q: Vec<f64> = rows.iter().map(|x| x.1).collect();
    let p = mann_kendall(&window_means(&q, 40));
    let b: Vec<f64> = r.backlog.iter().map(|&x| x as f64).collect();
    let w = window_means(&b, 11);
    (p, w.windows(2).filter(|p| p[1] > p[0]).count())
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub seed: u64,
    pub vehicles: usize,
    pub mode: v2xsim::sim::DeploymentMode,
    pub flows: usize,
    /// Mean end-to-end latency of Normal-priority rows.
    pub general_e2e_ms: f64,
    /// Timed-out High rows over all rows.
    pub high_timeout_ratio: f64,
    /// Timed-out rows over all rows.
    pub timeout_ratio: f64,
}

/// Corridor runs with the default scenario (two base stations, five RSUs,
/// default traffic) for every seed, vehicle count and mode, spread over the
/// available cores.
pub fn trend_sweep(seeds: &[u64], vehicles: &[usize], duration_s: f64) -> Vec<SweepRow> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    use v2xsim::scenario::{run_scenario, ScenarioConfig};
    use v2xsim::sim::{timeout_ratio, DeploymentMode};
    use v2xsim::traffic::Priority;
    let jobs: Vec<(u64, usize, DeploymentMode)> = seeds
        .iter()
        .flat_map(|&s| {
            vehicles
                .iter()
                .flat_map(move |&v| DeploymentMode::ALL.map(|m| (s, v, m)))
        })
        .collect();
    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                while let Some(&(seed, n, mode)) = jobs.get(next.fetch_add(1, Ordering::Relaxed)) {
                    let mut cfg = ScenarioConfig {
                        seed,
                        mode,
                        duration_s,
                        ..ScenarioConfig::default()
                    };
                    cfg.corridor.vehicles = n;
                    let (out, _) = run_scenario(&cfg, None).expect("default scenario runs");
                    let normal: Vec<f64> = out
                        .log
                        .iter()
                        .filter(|r| r.priority_origin == Priority::Normal)
                        .map(|r| r.e2e_ms)
                        .collect();
                    let late = out.log.iter().filter(|r| r.timed_out).count();
                    rows.lock().unwrap().push(SweepRow {
                        seed,
                        vehicles: n,
                        mode,
                        flows: out.log.len(),
                        general_e2e_ms: normal.iter().sum::<f64>() / normal.len().max(1) as f64,
                        high_timeout_ratio: timeout_ratio(&out.log, Priority::High),
                        timeout_ratio: late as f64 / out.log.len().max(1) as f64,
                    });
                }
            });
        }
    });
    let mut rows = rows.into_inner().unwrap();
    rows.sort_by_key(|r| (r.vehicles, r.seed, r.mode));
    rows
}
