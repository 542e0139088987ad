use crate::ids::ApId;
use crate::radio::{GainTable, PathlossModel, Position};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("topology needs at least one base station")]
    NoBaseStation,
    #[error("access point {ap}: {reason}")]
    Param { ap: ApId, reason: String },
    #[error("RSU {rsu} lies within {count} base-station coverages, expected exactly one")]
    Ownership { rsu: ApId, count: usize },
    #[error("RSU coverages of {0} and {1} overlap")]
    RsuOverlap(ApId, ApId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApKind {
    /// Regional 4G macrocell.
    Bs,
    /// Local 5G roadside unit.
    Rsu,
}

impl fmt::Display for ApKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApKind::Bs => "bs",
            ApKind::Rsu => "rsu",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessPoint {
    pub id: ApId,
    pub kind: ApKind,
    pub position: Position,
    /// Total band, split evenly between uplink and downlink.
    pub bandwidth_mhz: f64,
    pub tx_power_dbm: f64,
    pub range_m: f64,
    pub carrier_ghz: f64,
    pub model: PathlossModel,
    /// Base station an RSU forwards to.
    pub owner: Option<ApId>,
}

impl AccessPoint {
    pub fn half_bandwidth_mhz(&self) -> f64 {
        self.bandwidth_mhz / 2.0
    }

    pub fn covers(&self, p: &Position) -> bool {
        self.position.distance_to(p) <= self.range_m
    }
}

/// Base stations first, then RSUs; `ApId` equals the index.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    aps: Vec<AccessPoint>,
}

/// Parameters shared by every access point of one kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApClass {
    pub bandwidth_mhz: f64,
    pub tx_power_dbm: f64,
    pub range_m: f64,
    pub carrier_ghz: f64,
    pub model: PathlossModel,
}

impl ApClass {
    pub fn macrocell() -> Self {
        Self {
            bandwidth_mhz: 20.0,
            tx_power_dbm: 23.0,
            range_m: 500.0,
            carrier_ghz: 2.0,
            model: PathlossModel::Uma,
        }
    }

    pub fn roadside() -> Self {
        Self {
            bandwidth_mhz: 10.0,
            tx_power_dbm: 10.0,
            range_m: 50.0,
            carrier_ghz: 3.5,
            model: PathlossModel::Umi,
        }
    }
}

impl Topology {
    /// Builds and validates a topology; each RSU is owned by the base station
    /// covering it.
    pub fn new(
        bs: &[Position],
        bs_class: ApClass,
        rsu: &[Position],
        rsu_class: ApClass,
    ) -> Result<Self, TopologyError> {
        if bs.is_empty() {
            return Err(TopologyError::NoBaseStation);
        }
        let mut aps = Vec::with_capacity(bs.len() + rsu.len());
        let mk = |i: usize, kind, position, c: ApClass| AccessPoint {
            id: ApId(i as u32),
            kind,
            position,
            bandwidth_mhz: c.bandwidth_mhz,
            tx_power_dbm: c.tx_power_dbm,
            range_m: c.range_m,
            carrier_ghz: c.carrier_ghz,
            model: c.model,
            owner: None,
        };
        for &p in bs {
            aps.push(mk(aps.len(), ApKind::Bs, p, bs_class));
        }
        for &p in rsu {
            aps.push(mk(aps.len(), ApKind::Rsu, p, rsu_class));
        }
        for ap in &aps {
            let bad = |reason: String| TopologyError::Param { ap: ap.id, reason };
            if !ap.position.is_finite() {
                return Err(bad("position must be finite".into()));
            }
            if !(ap.bandwidth_mhz > 0.0) || !ap.bandwidth_mhz.is_finite() {
                return Err(bad(format!(
                    "bandwidth must be positive, got {}",
                    ap.bandwidth_mhz
                )));
            }
            if !(ap.range_m > 0.0) || !ap.range_m.is_finite() {
                return Err(bad(format!("range must be positive, got {}", ap.range_m)));
            }
            if !(ap.carrier_ghz > 0.0) || !ap.carrier_ghz.is_finite() {
                return Err(bad(format!(
                    "carrier must be positive, got {}",
                    ap.carrier_ghz
                )));
            }
            if !ap.tx_power_dbm.is_finite() {
                return Err(bad("tx power must be finite".into()));
            }
        }
        let n_bs = bs.len();
        for i in n_bs..aps.len() {
            let owners: Vec<ApId> = aps[..n_bs]
                .iter()
                .filter(|b| b.covers(&aps[i].position))
                .map(|b| b.id)
                .collect();
            if owners.len() != 1 {
                return Err(TopologyError::Ownership {
                    rsu: aps[i].id,
                    count: owners.len(),
                });
            }
            aps[i].owner = Some(owners[0]);
            for j in n_bs..i {
                if aps[i].position.distance_to(&aps[j].position) < aps[i].range_m + aps[j].range_m {
                    return Err(TopologyError::RsuOverlap(aps[j].id, aps[i].id));
                }
            }
        }
        Ok(Self { aps })
    }

    pub fn aps(&self) -> &[AccessPoint] {
        &self.aps
    }

    pub fn ap(&self, id: ApId) -> &AccessPoint {
        &self.aps[id.0 as usize]
    }

    pub fn base_stations(&self) -> impl Iterator<Item = &AccessPoint> {
        self.aps.iter().filter(|a| a.kind == ApKind::Bs)
    }

    pub fn rsus(&self) -> impl Iterator<Item = &AccessPoint> {
        self.aps.iter().filter(|a| a.kind == ApKind::Rsu)
    }
}

/// A vehicle's access points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Association {
    pub bs: ApId,
    pub rsu: Option<ApId>,
}

/// Strongest base station plus strongest RSU among the access points the
/// vehicle is in range of (those with an entry in `gains`). `None` means the
/// vehicle is out of coverage.
pub fn associate(
    vehicle: crate::ids::VehicleId,
    topology: &Topology,
    gains: &GainTable,
) -> Option<Association> {
    let best = |kind: ApKind| {
        topology
            .aps()
            .iter()
            .filter(|a| a.kind == kind)
            .filter_map(|a| gains.get(vehicle, a.id).map(|g| (a.id, g)))
            .fold(None, |acc: Option<(ApId, f64)>, (id, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((id, g)),
            })
            .map(|(id, _)| id)
    };
    Some(Association {
        bs: best(ApKind::Bs)?,
        rsu: best(ApKind::Rsu),
    })
}
