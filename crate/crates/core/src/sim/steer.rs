use super::topology::Association;
use crate::ids::ApId;
use crate::traffic::{GroupKind, Priority, Segment};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentMode {
    /// Macrocell only: every flow uses the base station.
    Mc,
    /// Socially aware: High flows use an attached RSU, priorities never change.
    Sa,
    /// QoS reclassify: as `Sa`, but flows leaving their RSU continue as Normal.
    Qr,
}

impl DeploymentMode {
    pub const ALL: [DeploymentMode; 3] =
        [DeploymentMode::Mc, DeploymentMode::Sa, DeploymentMode::Qr];

    pub fn as_str(self) -> &'static str {
        match self {
            DeploymentMode::Mc => "mc",
            DeploymentMode::Sa => "sa",
            DeploymentMode::Qr => "qr",
        }
    }

    pub fn uses_rsus(self) -> bool {
        self != DeploymentMode::Mc
    }
}

impl fmt::Display for DeploymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeploymentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mc" => Ok(DeploymentMode::Mc),
            "sa" => Ok(DeploymentMode::Sa),
            "qr" => Ok(DeploymentMode::Qr),
            _ => Err(format!(
                "unknown deployment mode `{s}` (expected mc, sa or qr)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Steering {
    pub first_hop: ApId,
    pub path: Vec<Segment>,
}

/// Whether a flow received at an RSU must also reach the regional base
/// station.
pub fn regionally_relevant(kind: GroupKind, members_beyond_rsu: bool) -> bool {
    match kind {
        GroupKind::Rcws => true,
        GroupKind::Groupcast => members_beyond_rsu,
    }
}

/// First hop and segment path of a new flow. `regional` is only consulted for
/// flows that enter at an RSU.
pub fn steer(
    priority: Priority,
    mode: DeploymentMode,
    assoc: Association,
    regional: bool,
) -> Steering {
    match (mode.uses_rsus(), priority, assoc.rsu) {
        (true, Priority::High, Some(rsu)) => Steering {
            first_hop: rsu,
            path: if regional {
                vec![Segment::Uplink, Segment::Backhaul, Segment::Downlink]
            } else {
                vec![Segment::Uplink, Segment::Downlink]
            },
        },
        _ => Steering {
            first_hop: assoc.bs,
            path: vec![Segment::Uplink, Segment::Downlink],
        },
    }
}

/// Priority a flow carries beyond the backhaul hop.
pub fn reclassify(priority: Priority, mode: DeploymentMode) -> Priority {
    match mode {
        DeploymentMode::Qr => Priority::Normal,
        DeploymentMode::Mc | DeploymentMode::Sa => priority,
    }
}

/// Priority per segment: unchanged up to the backhaul, reclassified after it.
pub fn segment_priorities(
    priority: Priority,
    path: &[Segment],
    mode: DeploymentMode,
) -> Vec<Priority> {
    let mut forwarded = false;
    path.iter()
        .map(|s| {
            forwarded |= *s == Segment::Backhaul;
            if forwarded {
                reclassify(priority, mode)
            } else {
                priority
            }
        })
        .collect()
}
