//! Seeded random allocation instances for benchmarks and property tests.

use super::{AllocationInstance, GroupDemand};
use crate::grid::{Direction, RbGeometry, ResourceGrid};
use crate::ids::{ApId, GroupId};
use crate::radio::{McsEntry, McsTable};
use crate::traffic::Priority;
use rand::Rng;
use std::ops::RangeInclusive;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub subchannels: RangeInclusive<usize>,
    pub groups: RangeInclusive<usize>,
    pub high_share: f64,
    pub low_latency_share: f64,
    /// Demand as a multiple of one top-MCS RB.
    pub demand_rbs: RangeInclusive<f64>,
    pub gain_db: RangeInclusive<f64>,
    pub group_size: RangeInclusive<u32>,
    /// Fixed table; `None` draws a fresh table of `mcs_levels` levels.
    pub mcs: Option<Arc<McsTable>>,
    pub mcs_levels: RangeInclusive<u8>,
}

impl Default for RandomInstance {
    fn default() -> Self {
        Self {
            subchannels: 1..=3,
            groups: 1..=4,
            high_share: 0.3,
            low_latency_share: 0.3,
            demand_rbs: 0.2..=3.0,
            gain_db: 0.0..=25.0,
            group_size: 1..=20,
            mcs: None,
            mcs_levels: 1..=2,
        }
    }
}

impl RandomInstance {
    /// Instances sized for `groups` groups on an equally wide grid under the
    /// bundled MCS table.
    pub fn scaled(groups: usize) -> Self {
        Self {
            subchannels: groups..=groups,
            groups: groups..=groups,
            demand_rbs: 0.5..=4.0,
            mcs: Some(Arc::new(McsTable::default())),
            ..Self::default()
        }
    }

    fn table(&self, rng: &mut impl Rng) -> Arc<McsTable> {
        if let Some(t) = &self.mcs {
            return t.clone();
        }
        let levels = rng.random_range(self.mcs_levels.clone());
        let mut entries = vec![McsEntry {
            cqi_index: 0,
            min_sinr_db: f64::NEG_INFINITY,
            bits_per_fraction: 0,
        }];
        let (mut sinr, mut bits) = (rng.random_range(-3.0..6.0), rng.random_range(20u32..=120));
        for i in 1..=levels {
            entries.push(McsEntry {
                cqi_index: i,
                min_sinr_db: sinr,
                bits_per_fraction: bits,
            });
            sinr += rng.random_range(2.0..10.0);
            bits += rng.random_range(10..=150);
        }
        Arc::new(McsTable::from_entries(entries).expect("increasing levels"))
    }

    pub fn generate(&self, rng: &mut impl Rng) -> AllocationInstance {
        let mcs = self.table(rng);
        let subchannels = rng.random_range(self.subchannels.clone());
        let n = rng.random_range(self.groups.clone());
        let rb = mcs.top().bits_per_fraction as f64 * 2.0;
        let groups = (0..n)
            .map(|i| {
                let shape = if subchannels >= 2 && rng.random_bool(self.low_latency_share) {
                    RbGeometry::LowLatency
                } else {
                    RbGeometry::Normal
                };
                let priority = if rng.random_bool(self.high_share) {
                    Priority::High
                } else {
                    Priority::Normal
                };
                let gains = (0..subchannels)
                    .map(|_| 10f64.powf(rng.random_range(self.gain_db.clone()) / 10.0))
                    .collect();
                GroupDemand {
                    group_id: GroupId(i as u32 + 1),
                    priority,
                    bits: ((rb * rng.random_range(self.demand_rbs.clone())).ceil() as u64).max(1),
                    fair: rng.random_range(1.0..1e5),
                    size: rng.random_range(self.group_size.clone()),
                    shape,
                    gains,
                }
            })
            .collect();
        let grid = ResourceGrid::with_subchannels(ApId(0), Direction::Downlink, subchannels);
        AllocationInstance::new(grid, groups, mcs).expect("generated groups are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generation_is_seeded_and_in_range() {
        let spec = RandomInstance::default();
        for seed in 0..50 {
            let a = spec.generate(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = spec.generate(&mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a.groups, b.groups);
            assert!((1..=3).contains(&a.grid.subchannels()));
            assert!((1..=4).contains(&a.groups.len()));
            assert!(a.mcs.entries().len() <= 3);
            assert!(a
                .groups
                .iter()
                .all(|g| g.shape == RbGeometry::Normal || a.grid.subchannels() >= 2));
        }
    }

    #[test]
    fn scaled_instances_use_the_bundled_table() {
        let i = RandomInstance::scaled(16).generate(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!((i.groups.len(), i.grid.subchannels()), (16, 16));
        assert_eq!(i.mcs.top().cqi_index, McsTable::default().top().cqi_index);
    }
}
