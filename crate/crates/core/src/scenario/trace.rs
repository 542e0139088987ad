use super::config::CorridorSpec;
use crate::ids::VehicleId;
use crate::radio::Position;
use crate::sim::{NonMonotoneTime, Timeline};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TRACE_HEADER: [&str; 4] = ["time", "vehicle_id", "x", "y"];

const MOBILITY_STREAM: u64 = 4;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace header must be `time,vehicle_id,x,y`, got `{0}`")]
    Header(String),
    #[error("trace line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("trace line {line}: {source}")]
    Order { line: u64, source: NonMonotoneTime },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid synthetic mobility: {0}")]
    Synth(String),
}

#[derive(Deserialize)]
struct Row {
    time: f64,
    vehicle_id: u32,
    x: f64,
    y: f64,
}

/// Parses a `time,vehicle_id,x,y` CSV (seconds, meters). Samples of each
/// vehicle must be in non-decreasing time order.
pub fn parse_trace(text: &str) -> Result<Timeline, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| TraceError::Header(e.to_string()))?
        .clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(TraceError::Header(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    let mut timeline = Timeline::new();
    for record in rdr.records() {
        let record = record.map_err(|e| TraceError::Row {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&header))
            .map_err(|e| TraceError::Row {
                line,
                reason: e.to_string(),
            })?;
        let position = Position::new(row.x, row.y);
        if !row.time.is_finite() || !position.is_finite() {
            return Err(TraceError::Row {
                line,
                reason: "time and coordinates must be finite".into(),
            });
        }
        timeline
            .push(VehicleId(row.vehicle_id), row.time, position)
            .map_err(|source| TraceError::Order { line, source })?;
    }
    Ok(timeline)
}

pub fn load_trace(path: &Path) -> Result<Timeline, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(&text)
}

/// Looped two-lane road: eastbound on `y = 0` over `[0, length_m]`,
/// westbound on `y = 2 r`, joined by half circles of radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corridor {
    pub length_m: f64,
    pub turn_radius_m: f64,
}

impl Corridor {
    pub fn perimeter(&self) -> f64 {
        2.0 * self.length_m + 2.0 * PI * self.turn_radius_m
    }

    /// Point at arc length `s` from the origin, counter-clockwise.
    pub fn point_at(&self, s: f64) -> Position {
        let (l, r) = (self.length_m, self.turn_radius_m);
        let s = s.rem_euclid(self.perimeter());
        let turn = PI * r;
        if s < l {
            Position::new(s, 0.0)
        } else if s < l + turn {
            let a = (s - l) / r;
            Position::new(l + r * a.sin(), r - r * a.cos())
        } else if s < 2.0 * l + turn {
            Position::new(l - (s - l - turn), 2.0 * r)
        } else {
            let a = (s - 2.0 * l - turn) / r;
            Position::new(-r * a.sin(), r + r * a.cos())
        }
    }
}

/// `road.vehicles` vehicles placed uniformly on the corridor, each at a
/// constant speed drawn from the speed range, sampled every `step_s` over
/// `[0, horizon_s]`. Vehicles are numbered from zero.
pub fn synth_mobility(
    road: &CorridorSpec,
    seed: u64,
    horizon_s: f64,
    step_s: f64,
) -> Result<Timeline, TraceError> {
    if !(step_s > 0.0 && step_s.is_finite()) || !(horizon_s >= 0.0 && horizon_s.is_finite()) {
        return Err(TraceError::Synth(format!(
            "step {step_s} s over horizon {horizon_s} s"
        )));
    }
    if !(road.speed_min_mps > 0.0
        && road.speed_min_mps <= road.speed_max_mps
        && road.speed_max_mps.is_finite())
    {
        return Err(TraceError::Synth(format!(
            "speed range {}..{}",
            road.speed_min_mps, road.speed_max_mps
        )));
    }
    if !(road.length_m > 0.0 && road.turn_radius_m > 0.0) {
        return Err(TraceError::Synth(
            "corridor dimensions must be positive".into(),
        ));
    }
    let corridor = Corridor {
        length_m: road.length_m,
        turn_radius_m: road.turn_radius_m,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MOBILITY_STREAM);
    let steps = (horizon_s / step_s).ceil() as u64;
    let mut timeline = Timeline::new();
    for v in 0..road.vehicles {
        let start = rng.random_range(0.0..corridor.perimeter());
        let speed = if road.speed_max_mps > road.speed_min_mps {
            rng.random_range(road.speed_min_mps..road.speed_max_mps)
        } else {
            road.speed_min_mps
        };
        for k in 0..=steps {
            let t = k as f64 * step_s;
            timeline
                .push(VehicleId(v as u32), t, corridor.point_at(start + speed * t))
                .expect("sample times increase");
        }
    }
    Ok(timeline)
}
