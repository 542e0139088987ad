//! Two-layer NOMA time-frequency grid of one access point direction.
//!
//! The atomic cell is a fraction: one 180 kHz subchannel for 0.5 ms. A
//! subframe holds two slots, so fraction `n = subchannel * 2 + slot`. Both RB
//! geometries cover exactly two fractions:
//!
//! * [`RbGeometry::Normal`] (180 kHz x 1 ms) covers both slots of one
//!   subchannel and anchors at slot 0.
//! * [`RbGeometry::LowLatency`] (360 kHz x 0.5 ms) covers one slot of two
//!   adjacent subchannels and anchors at even subchannels.
//!
//! Per fraction and layer at most one placement may exist, the summed power of
//! both layers may not exceed the normalized budget, and the two layers must
//! agree on geometry. The one sanctioned mix is a bridged (combinatorial) RB: a
//! low-latency outer placement over two normal inner placements that together
//! span 360 kHz x 1 ms.

use crate::ids::{ApId, GroupId};
use crate::radio::{subchannels_for, McsTable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Fixed-point share of the per-fraction power budget `P_M`.
///
/// Integer units keep the ledger exact: residual plus placed power is always
/// precisely the full budget.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct PowerShare(u32);

impl PowerShare {
    pub const SCALE: u32 = 1 << 30;
    pub const ZERO: PowerShare = PowerShare(0);
    pub const FULL: PowerShare = PowerShare(Self::SCALE);

    pub fn from_units(units: u32) -> Self {
        PowerShare(units)
    }

    /// Smallest share not below `fraction`; `None` above the full budget.
    pub fn from_fraction_ceil(fraction: f64) -> Option<Self> {
        if fraction.is_nan() || fraction > 1.0 {
            return None;
        }
        let exact = fraction.max(0.0) * Self::SCALE as f64;
        let mut units = exact as u64;
        if (units as f64) < exact {
            units += 1;
        }
        (units <= Self::SCALE as u64).then_some(PowerShare(units as u32))
    }

    pub fn units(self) -> u32 {
        self.0
    }

    pub fn as_fraction(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for PowerShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.as_fraction())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbGeometry {
    /// 180 kHz x 1 ms.
    Normal,
    /// 360 kHz x 0.5 ms.
    LowLatency,
}

impl RbGeometry {
    pub fn bandwidth_khz(self) -> u32 {
        match self {
            RbGeometry::Normal => 180,
            RbGeometry::LowLatency => 360,
        }
    }

    pub fn duration_ms(self) -> f64 {
        match self {
            RbGeometry::Normal => 1.0,
            RbGeometry::LowLatency => 0.5,
        }
    }

    /// The two fractions covered by an RB anchored at `anchor`.
    pub fn fractions(self, anchor: FractionIndex) -> [FractionIndex; 2] {
        match self {
            RbGeometry::Normal => [anchor, FractionIndex::new(anchor.subchannel, 1)],
            RbGeometry::LowLatency => [
                anchor,
                FractionIndex::new(anchor.subchannel + 1, anchor.slot),
            ],
        }
    }

    /// Every aligned anchor of this geometry on a grid of `subchannels`.
    pub fn anchors(self, subchannels: usize) -> Vec<FractionIndex> {
        match self {
            RbGeometry::Normal => (0..subchannels).map(|s| FractionIndex::new(s, 0)).collect(),
            RbGeometry::LowLatency => (0..subchannels / 2)
                .flat_map(|p| [FractionIndex::new(2 * p, 0), FractionIndex::new(2 * p, 1)])
                .collect(),
        }
    }

    pub fn is_anchor(self, anchor: FractionIndex, subchannels: usize) -> bool {
        match self {
            RbGeometry::Normal => anchor.slot == 0 && anchor.subchannel < subchannels,
            RbGeometry::LowLatency => {
                anchor.slot < 2
                    && anchor.subchannel.is_multiple_of(2)
                    && anchor.subchannel + 1 < subchannels
            }
        }
    }

    pub fn short(self) -> char {
        match self {
            RbGeometry::Normal => 'N',
            RbGeometry::LowLatency => 'L',
        }
    }
}

impl fmt::Display for RbGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RbGeometry::Normal => f.write_str("normal"),
            RbGeometry::LowLatency => f.write_str("low_latency"),
        }
    }
}

/// NOMA layer. The inner layer is placed first and may take the whole
/// budget; the outer layer lives on what remains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Inner,
    Outer,
}

impl Layer {
    pub const BOTH: [Layer; 2] = [Layer::Inner, Layer::Outer];

    pub fn index(self) -> usize {
        match self {
            Layer::Inner => 0,
            Layer::Outer => 1,
        }
    }

    pub fn other(self) -> Layer {
        match self {
            Layer::Inner => Layer::Outer,
            Layer::Outer => Layer::Inner,
        }
    }

    pub fn from_index(i: usize) -> Option<Layer> {
        match i {
            0 => Some(Layer::Inner),
            1 => Some(Layer::Outer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Uplink => f.write_str("uplink"),
            Direction::Downlink => f.write_str("downlink"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FractionIndex {
    pub subchannel: usize,
    pub slot: usize,
}

impl FractionIndex {
    pub fn new(subchannel: usize, slot: usize) -> Self {
        Self { subchannel, slot }
    }

    pub fn flat(self) -> usize {
        self.subchannel * 2 + self.slot
    }
}

impl fmt::Display for FractionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.subchannel, self.slot)
    }
}

/// One realized assignment: an RB of `geometry` at `anchor`, in `layer`,
/// carrying `group_id` with MCS `mcs` at `power` per fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbPlacement {
    pub group_id: GroupId,
    pub layer: Layer,
    pub mcs: u8,
    pub geometry: RbGeometry,
    pub anchor: FractionIndex,
    pub power: PowerShare,
}

impl RbPlacement {
    pub fn fractions(&self) -> [FractionIndex; 2] {
        self.geometry.fractions(self.anchor)
    }

    /// End of the RB relative to the subframe start, in ms.
    pub fn end_offset_ms(&self) -> f64 {
        match self.geometry {
            RbGeometry::Normal => 1.0,
            RbGeometry::LowLatency => 0.5 * (self.anchor.slot as f64 + 1.0),
        }
    }
}

/// Bits carried by a placement: both fractions at its MCS.
pub fn rb_bits(placement: &RbPlacement, table: &McsTable) -> u32 {
    table
        .get(placement.mcs)
        .map_or(0, |e| e.bits_per_fraction * 2)
}

/// RB count of a band: `floor(bandwidth * overhead / rb_bandwidth) * layers`.
pub fn grid_capacity(
    bandwidth_mhz: f64,
    overhead: f64,
    geometry: RbGeometry,
    layers: usize,
) -> usize {
    if !(bandwidth_mhz > 0.0) || !(overhead > 0.0) {
        return 0;
    }
    let per_layer =
        (bandwidth_mhz * 1000.0 * overhead / geometry.bandwidth_khz() as f64 + 1e-9).floor();
    per_layer as usize * layers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlacementId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedRb {
    pub id: PlacementId,
    pub placement: RbPlacement,
    /// Low-latency outer RB straddling two normal inner RBs.
    pub bridged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("anchor {anchor} is not an aligned {geometry} anchor")]
    InvalidAnchor {
        anchor: FractionIndex,
        geometry: RbGeometry,
    },
    #[error("placement power must be in (0, 1]")]
    InvalidPower,
    #[error("fraction {fraction} already holds a placement in layer {layer}")]
    Overlap {
        fraction: FractionIndex,
        layer: usize,
    },
    #[error("fraction {fraction} would carry {units} power units over a budget of {budget}")]
    PowerBudget {
        fraction: FractionIndex,
        units: u64,
        budget: u32,
    },
    #[error("fraction {fraction} would mix RB geometries across layers")]
    NumerologyMix { fraction: FractionIndex },
    #[error("no placement {0:?}")]
    UnknownPlacement(PlacementId),
    #[error("ledger mismatch at fraction {0}")]
    Ledger(FractionIndex),
}

/// An anchor where an RB of the queried geometry fits in the queried layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Candidate {
    pub anchor: FractionIndex,
    pub bridged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    ap_id: ApId,
    direction: Direction,
    bandwidth_mhz: f64,
    overhead: f64,
    subchannels: usize,
    cells: Vec<[Option<PlacementId>; 2]>,
    occupants: Vec<[Option<PlacedRb>; 2]>,
    power: Vec<[PowerShare; 2]>,
    placements: BTreeMap<PlacementId, PlacedRb>,
    next_id: u32,
}

impl ResourceGrid {
    /// Grid over one direction's share of the band: `bandwidth_mhz` is the
    /// direction's half of the access point bandwidth.
    pub fn new(ap_id: ApId, direction: Direction, bandwidth_mhz: f64, overhead: f64) -> Self {
        let subchannels = subchannels_for(bandwidth_mhz.max(0.0), overhead);
        Self {
            ap_id,
            direction,
            bandwidth_mhz,
            overhead,
            subchannels,
            cells: vec![[None; 2]; subchannels * 2],
            occupants: vec![[None; 2]; subchannels * 2],
            power: vec![[PowerShare::ZERO; 2]; subchannels * 2],
            placements: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn with_subchannels(ap_id: ApId, direction: Direction, subchannels: usize) -> Self {
        let mut g = Self::new(ap_id, direction, 0.0, 0.9);
        g.bandwidth_mhz = subchannels as f64 * 0.18 / 0.9;
        g.subchannels = subchannels;
        g.cells = vec![[None; 2]; subchannels * 2];
        g.occupants = vec![[None; 2]; subchannels * 2];
        g.power = vec![[PowerShare::ZERO; 2]; subchannels * 2];
        g
    }

    /// Same dimensions, nothing placed.
    pub fn cleared(&self) -> Self {
        let mut g = self.clone();
        g.clear();
        g
    }

    pub fn clear(&mut self) {
        self.cells.iter_mut().for_each(|c| *c = [None; 2]);
        self.occupants.iter_mut().for_each(|c| *c = [None; 2]);
        self.power
            .iter_mut()
            .for_each(|p| *p = [PowerShare::ZERO; 2]);
        self.placements.clear();
        self.next_id = 0;
    }

    pub fn ap_id(&self) -> ApId {
        self.ap_id
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn bandwidth_mhz(&self) -> f64 {
        self.bandwidth_mhz
    }

    pub fn overhead(&self) -> f64 {
        self.overhead
    }

    pub fn subchannels(&self) -> usize {
        self.subchannels
    }

    pub fn fraction_count(&self) -> usize {
        self.subchannels * 2
    }

    /// Whether every fraction of `layer` is taken.
    pub fn is_full(&self, layer: Layer) -> bool {
        self.cells.iter().all(|c| c[layer.index()].is_some())
    }

    pub fn in_bounds(&self, f: FractionIndex) -> bool {
        f.subchannel < self.subchannels && f.slot < 2
    }

    pub fn occupant(&self, f: FractionIndex, layer: Layer) -> Option<&PlacedRb> {
        self.occupants[f.flat()][layer.index()].as_ref()
    }

    pub fn get(&self, id: PlacementId) -> Option<&PlacedRb> {
        self.placements.get(&id)
    }

    pub fn placements(&self) -> impl Iterator<Item = &PlacedRb> {
        self.placements.values()
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn layer_power(&self, f: FractionIndex, layer: Layer) -> PowerShare {
        self.power[f.flat()][layer.index()]
    }

    /// Unplaced share of the budget at a fraction.
    pub fn residual_power(&self, f: FractionIndex) -> PowerShare {
        let [a, b] = self.power[f.flat()];
        PowerShare(PowerShare::SCALE - a.0 - b.0)
    }

    /// Geometry check of an RB against the other layer. Returns whether the RB
    /// would be bridged.
    fn purity(
        &self,
        geometry: RbGeometry,
        layer: Layer,
        frs: &[FractionIndex; 2],
    ) -> Result<bool, Violation> {
        let other = layer.other();
        let shape = |f: &FractionIndex| {
            self.occupants[f.flat()][other.index()].map(|p| p.placement.geometry)
        };
        let occ = [shape(&frs[0]), shape(&frs[1])];
        match occ {
            [None, None] => Ok(false),
            [Some(a), Some(b)] if a == geometry && b == geometry => Ok(false),
            [Some(RbGeometry::Normal), Some(RbGeometry::Normal)]
                if layer == Layer::Outer && geometry == RbGeometry::LowLatency =>
            {
                Ok(true)
            }
            _ => {
                let bad = if occ[0] != Some(geometry) {
                    frs[0]
                } else {
                    frs[1]
                };
                Err(Violation::NumerologyMix { fraction: bad })
            }
        }
    }

    fn check_shape(
        &self,
        geometry: RbGeometry,
        anchor: FractionIndex,
    ) -> Result<[FractionIndex; 2], Violation> {
        if !geometry.is_anchor(anchor, self.subchannels) {
            return Err(Violation::InvalidAnchor { anchor, geometry });
        }
        Ok(geometry.fractions(anchor))
    }

    /// Anchors where an RB of `geometry` fits in `layer` regardless of power.
    pub fn candidate_locations(&self, geometry: RbGeometry, layer: Layer) -> Vec<Candidate> {
        self.candidates(geometry, layer).collect()
    }

    /// Lazy form of [`Self::candidate_locations`], in the same order.
    pub fn candidates(
        &self,
        geometry: RbGeometry,
        layer: Layer,
    ) -> impl Iterator<Item = Candidate> + '_ {
        let n = self.subchannels;
        (0..n * 2)
            .map(|i| FractionIndex::new(i / 2, i % 2))
            .filter(move |a| geometry.is_anchor(*a, n))
            .filter_map(move |anchor| {
                let frs = geometry.fractions(anchor);
                if frs
                    .iter()
                    .any(|f| self.cells[f.flat()][layer.index()].is_some())
                {
                    return None;
                }
                self.purity(geometry, layer, &frs)
                    .ok()
                    .map(|bridged| Candidate { anchor, bridged })
            })
    }

    /// Validates a placement without recording it.
    pub fn check(&self, p: &RbPlacement) -> Result<bool, Violation> {
        if p.power.is_zero() || p.power > PowerShare::FULL {
            return Err(Violation::InvalidPower);
        }
        let frs = self.check_shape(p.geometry, p.anchor)?;
        for f in &frs {
            if self.cells[f.flat()][p.layer.index()].is_some() {
                return Err(Violation::Overlap {
                    fraction: *f,
                    layer: p.layer.index(),
                });
            }
        }
        let bridged = self.purity(p.geometry, p.layer, &frs)?;
        for f in &frs {
            let [a, b] = self.power[f.flat()];
            let units = a.0 as u64 + b.0 as u64 + p.power.0 as u64;
            if units > PowerShare::SCALE as u64 {
                return Err(Violation::PowerBudget {
                    fraction: *f,
                    units,
                    budget: PowerShare::SCALE,
                });
            }
        }
        Ok(bridged)
    }

    /// Records a placement if every grid constraint holds; otherwise the grid
    /// is left untouched.
    pub fn place(&mut self, p: RbPlacement) -> Result<PlacementId, Violation> {
        let bridged = self.check(&p)?;
        let id = PlacementId(self.next_id);
        self.next_id += 1;
        let placed = PlacedRb {
            id,
            placement: p,
            bridged,
        };
        for f in p.fractions() {
            self.cells[f.flat()][p.layer.index()] = Some(id);
            self.occupants[f.flat()][p.layer.index()] = Some(placed);
            self.power[f.flat()][p.layer.index()] = p.power;
        }
        self.placements.insert(id, placed);
        Ok(id)
    }

    /// Removes a placement. Refused when it would leave a bridged outer RB
    /// standing on a half-empty inner layer.
    pub fn remove(&mut self, id: PlacementId) -> Result<RbPlacement, Violation> {
        let placed = *self
            .placements
            .get(&id)
            .ok_or(Violation::UnknownPlacement(id))?;
        let p = placed.placement;
        if p.layer == Layer::Inner {
            for f in p.fractions() {
                if let Some(upper) = self.occupant(f, Layer::Outer) {
                    if upper.bridged {
                        return Err(Violation::NumerologyMix { fraction: f });
                    }
                }
            }
        }
        for f in p.fractions() {
            self.cells[f.flat()][p.layer.index()] = None;
            self.occupants[f.flat()][p.layer.index()] = None;
            self.power[f.flat()][p.layer.index()] = PowerShare::ZERO;
        }
        self.placements.remove(&id);
        Ok(p)
    }

    /// Changes the power of an existing placement, subject to the budget.
    pub fn set_power(&mut self, id: PlacementId, power: PowerShare) -> Result<(), Violation> {
        let placed = *self
            .placements
            .get(&id)
            .ok_or(Violation::UnknownPlacement(id))?;
        if power.is_zero() || power > PowerShare::FULL {
            return Err(Violation::InvalidPower);
        }
        let layer = placed.placement.layer;
        for f in placed.placement.fractions() {
            let other = self.power[f.flat()][layer.other().index()];
            let units = other.0 as u64 + power.0 as u64;
            if units > PowerShare::SCALE as u64 {
                return Err(Violation::PowerBudget {
                    fraction: f,
                    units,
                    budget: PowerShare::SCALE,
                });
            }
        }
        for f in placed.placement.fractions() {
            self.power[f.flat()][layer.index()] = power;
            if let Some(o) = self.occupants[f.flat()][layer.index()].as_mut() {
                o.placement.power = power;
            }
        }
        self.placements
            .get_mut(&id)
            .expect("present")
            .placement
            .power = power;
        Ok(())
    }

    /// Recomputes every invariant from the placement list.
    pub fn validate(&self) -> Result<(), Violation> {
        let n = self.fraction_count();
        let mut cells = vec![[None::<PlacementId>; 2]; n];
        let mut power = vec![[0u64; 2]; n];
        for placed in self.placements.values() {
            let p = &placed.placement;
            if p.power.is_zero() || p.power > PowerShare::FULL {
                return Err(Violation::InvalidPower);
            }
            let frs = self.check_shape(p.geometry, p.anchor)?;
            for f in frs {
                let slot = &mut cells[f.flat()][p.layer.index()];
                if slot.is_some() {
                    return Err(Violation::Overlap {
                        fraction: f,
                        layer: p.layer.index(),
                    });
                }
                *slot = Some(placed.id);
                power[f.flat()][p.layer.index()] += p.power.0 as u64;
            }
        }
        for i in 0..n {
            let f = FractionIndex::new(i / 2, i % 2);
            let occupants = cells[i].map(|c| c.and_then(|id| self.placements.get(&id)).copied());
            if cells[i] != self.cells[i]
                || occupants != self.occupants[i]
                || power[i][0] != self.power[i][0].0 as u64
                || power[i][1] != self.power[i][1].0 as u64
            {
                return Err(Violation::Ledger(f));
            }
            let units = power[i][0] + power[i][1];
            if units > PowerShare::SCALE as u64 {
                return Err(Violation::PowerBudget {
                    fraction: f,
                    units,
                    budget: PowerShare::SCALE,
                });
            }
        }
        // Every cross-layer overlap involves an outer placement.
        for placed in self.placements.values() {
            let p = &placed.placement;
            if p.layer == Layer::Inner {
                continue;
            }
            let frs = p.fractions();
            let bridged = self.purity(p.geometry, p.layer, &frs)?;
            if bridged != placed.bridged {
                return Err(Violation::NumerologyMix { fraction: frs[0] });
            }
        }
        Ok(())
    }

    /// Text matrix, one row per layer, fractions grouped by subchannel.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "# grid ap={} dir={} subchannels={}\n",
            self.ap_id, self.direction, self.subchannels
        );
        for layer in Layer::BOTH {
            out.push_str(&format!("L{}", layer.index()));
            for s in 0..self.subchannels {
                out.push_str(" |");
                for slot in 0..2 {
                    let f = FractionIndex::new(s, slot);
                    match self.occupant(f, layer) {
                        Some(p) => out.push_str(&format!(
                            " g{}{}{}/{}",
                            p.placement.group_id,
                            p.placement.geometry.short(),
                            if p.bridged { "*" } else { "" },
                            p.placement.power
                        )),
                        None => out.push_str(" ."),
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}
