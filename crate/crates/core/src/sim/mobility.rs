use crate::ids::VehicleId;
use crate::radio::Position;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("vehicle {vehicle}: sample at {time_s} s precedes the previous one at {previous_s} s")]
pub struct NonMonotoneTime {
    pub vehicle: VehicleId,
    pub time_s: f64,
    pub previous_s: f64,
}

/// Piecewise-linear vehicle positions. A vehicle exists from its first to its
/// last sample; one with a single sample stays put forever. Two samples at
/// the same instant form a jump, and the later one wins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timeline {
    tracks: BTreeMap<VehicleId, Vec<(f64, Position)>>,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        vehicle: VehicleId,
        time_s: f64,
        position: Position,
    ) -> Result<(), NonMonotoneTime> {
        let track = self.tracks.entry(vehicle).or_default();
        if let Some(&(previous_s, _)) = track.last() {
            if time_s < previous_s {
                return Err(NonMonotoneTime {
                    vehicle,
                    time_s,
                    previous_s,
                });
            }
        }
        track.push((time_s, position));
        Ok(())
    }

    pub fn vehicles(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.tracks.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn samples(&self, vehicle: VehicleId) -> &[(f64, Position)] {
        self.tracks.get(&vehicle).map_or(&[], Vec::as_slice)
    }

    pub fn position_at(&self, vehicle: VehicleId, time_s: f64) -> Option<Position> {
        let track = self.tracks.get(&vehicle)?;
        if let [(_, p)] = track.as_slice() {
            return Some(*p);
        }
        let (first, last) = (track.first()?.0, track.last()?.0);
        if time_s < first || time_s > last {
            return None;
        }
        let next = track.partition_point(|(t, _)| *t <= time_s);
        let (t0, p0) = track[next - 1];
        match track.get(next) {
            Some(&(t1, p1)) => Some(p0.lerp(&p1, (time_s - t0) / (t1 - t0))),
            None => Some(p0),
        }
    }
}
