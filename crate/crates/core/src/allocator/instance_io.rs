//! Line-oriented text format for allocation instances:
//!
//! ```text
//! ap 0
//! direction downlink
//! subchannels 3
//! mcs default                      # or one `mcs <cqi> <min_sinr_db> <bits>` per entry
//! group <id> <high|normal> <bits> <fair> <size> <normal|low_latency> <gain>...
//! placed <group> <inner|outer> <mcs> <normal|low_latency> <subchannel> <slot> <power_units>
//! ```

use super::{AllocationInstance, GroupDemand};
use crate::grid::{
    Direction, FractionIndex, Layer, PowerShare, RbGeometry, RbPlacement, ResourceGrid,
};
use crate::ids::{ApId, GroupId};
use crate::radio::{McsEntry, McsTable};
use crate::traffic::Priority;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceFormatError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("missing `{0}` line")]
    Missing(&'static str),
    #[error("invalid instance: {0}")]
    Invalid(String),
}

fn field<T: FromStr>(
    cols: &[&str],
    i: usize,
    name: &str,
    line: usize,
) -> Result<T, InstanceFormatError>
where
    T::Err: std::fmt::Display,
{
    let raw = cols.get(i).ok_or_else(|| InstanceFormatError::Line {
        line,
        reason: format!("missing {name}"),
    })?;
    raw.parse().map_err(|e| InstanceFormatError::Line {
        line,
        reason: format!("{name} `{raw}`: {e}"),
    })
}

fn geometry(raw: &str, line: usize) -> Result<RbGeometry, InstanceFormatError> {
    match raw {
        "normal" => Ok(RbGeometry::Normal),
        "low_latency" => Ok(RbGeometry::LowLatency),
        _ => Err(InstanceFormatError::Line {
            line,
            reason: format!("unknown geometry `{raw}`"),
        }),
    }
}

pub fn parse_instance(text: &str) -> Result<AllocationInstance, InstanceFormatError> {
    let mut ap = ApId(0);
    let mut direction = Direction::Downlink;
    let mut subchannels: Option<usize> = None;
    let mut mcs_default = false;
    let mut entries = Vec::new();
    let mut groups = Vec::new();
    let mut placed: Vec<(usize, RbPlacement)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let cols: Vec<&str> = body.split_whitespace().collect();
        let bad = |reason: String| InstanceFormatError::Line { line, reason };
        match cols[0] {
            "ap" => ap = ApId(field(&cols, 1, "ap id", line)?),
            "direction" => {
                direction = match cols.get(1).copied() {
                    Some("uplink") => Direction::Uplink,
                    Some("downlink") => Direction::Downlink,
                    other => return Err(bad(format!("unknown direction {other:?}"))),
                }
            }
            "subchannels" => subchannels = Some(field(&cols, 1, "subchannel count", line)?),
            "mcs" if cols.get(1) == Some(&"default") => mcs_default = true,
            "mcs" => entries.push(McsEntry {
                cqi_index: field(&cols, 1, "cqi_index", line)?,
                min_sinr_db: field(&cols, 2, "min_sinr_db", line)?,
                bits_per_fraction: field(&cols, 3, "bits_per_fraction", line)?,
            }),
            "group" => {
                let priority = match cols.get(2).copied() {
                    Some("high") => Priority::High,
                    Some("normal") => Priority::Normal,
                    other => return Err(bad(format!("unknown priority {other:?}"))),
                };
                let gains = (7..cols.len())
                    .map(|i| field(&cols, i, "gain", line))
                    .collect::<Result<Vec<f64>, _>>()?;
                groups.push(GroupDemand {
                    group_id: GroupId(field(&cols, 1, "group id", line)?),
                    priority,
                    bits: field(&cols, 3, "bits", line)?,
                    fair: field(&cols, 4, "fair", line)?,
                    size: field(&cols, 5, "size", line)?,
                    shape: geometry(cols.get(6).copied().unwrap_or(""), line)?,
                    gains,
                });
            }
            "placed" => {
                let layer = match cols.get(2).copied() {
                    Some("inner") => Layer::Inner,
                    Some("outer") => Layer::Outer,
                    other => return Err(bad(format!("unknown layer {other:?}"))),
                };
                placed.push((
                    line,
                    RbPlacement {
                        group_id: GroupId(field(&cols, 1, "group id", line)?),
                        layer,
                        mcs: field(&cols, 3, "mcs", line)?,
                        geometry: geometry(cols.get(4).copied().unwrap_or(""), line)?,
                        anchor: FractionIndex::new(
                            field(&cols, 5, "subchannel", line)?,
                            field(&cols, 6, "slot", line)?,
                        ),
                        power: PowerShare::from_units(field(&cols, 7, "power units", line)?),
                    },
                ));
            }
            other => return Err(bad(format!("unknown record `{other}`"))),
        }
    }
    let subchannels = subchannels.ok_or(InstanceFormatError::Missing("subchannels"))?;
    let table = if mcs_default || entries.is_empty() {
        McsTable::default()
    } else {
        McsTable::from_entries(entries).map_err(|e| InstanceFormatError::Invalid(e.to_string()))?
    };
    let mut grid = ResourceGrid::with_subchannels(ap, direction, subchannels);
    placed.sort_by_key(|(_, p)| p.layer);
    for (line, p) in placed {
        grid.place(p).map_err(|e| InstanceFormatError::Line {
            line,
            reason: e.to_string(),
        })?;
    }
    AllocationInstance::new(grid, groups, Arc::new(table))
        .map_err(|e| InstanceFormatError::Invalid(e.to_string()))
}

pub fn render_instance(inst: &AllocationInstance) -> String {
    let mut out = String::new();
    let grid = &inst.grid;
    let _ = writeln!(out, "ap {}", grid.ap_id());
    let _ = writeln!(out, "direction {}", grid.direction());
    let _ = writeln!(out, "subchannels {}", grid.subchannels());
    if *inst.mcs == McsTable::default() {
        out.push_str("mcs default\n");
    } else {
        for e in inst.mcs.entries() {
            let _ = writeln!(
                out,
                "mcs {} {} {}",
                e.cqi_index, e.min_sinr_db, e.bits_per_fraction
            );
        }
    }
    for g in &inst.groups {
        let _ = write!(
            out,
            "group {} {} {} {} {} {}",
            g.group_id, g.priority, g.bits, g.fair, g.size, g.shape
        );
        for x in &g.gains {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    for p in grid.placements() {
        let q = p.placement;
        let layer = match q.layer {
            Layer::Inner => "inner",
            Layer::Outer => "outer",
        };
        let _ = writeln!(
            out,
            "placed {} {layer} {} {} {} {} {}",
            q.group_id,
            q.mcs,
            q.geometry,
            q.anchor.subchannel,
            q.anchor.slot,
            q.power.units()
        );
    }
    out
}
