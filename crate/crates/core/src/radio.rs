//! Link-level radio model: pathloss, NOMA SINR, CQI reports and the
//! SINR-to-capacity (MCS) map shared by both allocators.
//!
//! Powers handed to [`sinr`] and [`p_min`] are normalized to the access
//! point's per-fraction budget `P_M`; gains are therefore "effective" gains
//! (link gain times `P_M`) and noise is expressed in the same unit.

use crate::ids::{ApId, VehicleId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Distances below this are clamped before evaluating the pathloss law.
pub const MIN_DISTANCE_M: f64 = 10.0;

/// Width of one resource-block fraction (one subchannel).
pub const SUBCHANNEL_HZ: f64 = 180_000.0;

/// Thermal noise density used when a scenario does not override it.
pub const DEFAULT_NOISE_DENSITY_DBM_HZ: f64 = -174.0;

/// CQI reports carry SINR quantized to this step.
pub const CQI_STEP_DB: f64 = 0.1;

const DEFAULT_MCS_TABLE: &str = include_str!("../data/mcs_table_v1.txt");

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("MCS table line {line}: {reason}")]
    McsTable { line: usize, reason: String },
    #[error("reading MCS table: {0}")]
    Io(String),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> RadioError {
    RadioError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Position, t: f64) -> Position {
        Position {
            x: self.x + (other.x - self.x) * t,
            y: self.y + (other.y - self.y) * t,
        }
    }
}

/// Line-of-sight pathloss law used for an access point class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathlossModel {
    /// Urban macro, used by base stations.
    Uma,
    /// Urban micro street canyon, used by roadside units.
    Umi,
}

impl fmt::Display for PathlossModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathlossModel::Uma => f.write_str("uma"),
            PathlossModel::Umi => f.write_str("umi"),
        }
    }
}

/// LOS pathloss in dB.
///
/// UMa: `28.0 + 22 log10(d) + 20 log10(fc)`;
/// UMi: `32.4 + 21 log10(d) + 20 log10(fc)`, with `d` in meters clamped to
/// [`MIN_DISTANCE_M`] and `fc` in GHz.
pub fn pathloss_db(
    model: PathlossModel,
    distance_m: f64,
    carrier_ghz: f64,
) -> Result<f64, RadioError> {
    if !(carrier_ghz > 0.0) || !carrier_ghz.is_finite() {
        return Err(invalid(
            "carrier_ghz",
            format!("must be positive, got {carrier_ghz}"),
        ));
    }
    if distance_m.is_nan() || distance_m < 0.0 {
        return Err(invalid(
            "distance_m",
            format!("must be non-negative, got {distance_m}"),
        ));
    }
    let d = distance_m.max(MIN_DISTANCE_M);
    let fc_term = 20.0 * carrier_ghz.log10();
    Ok(match model {
        PathlossModel::Uma => 28.0 + 22.0 * d.log10() + fc_term,
        PathlossModel::Umi => 32.4 + 21.0 * d.log10() + fc_term,
    })
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Large-scale link gain between a vehicle and an access point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGain {
    pub pathloss_db: f64,
    pub shadow_db: f64,
    pub gain: f64,
}

impl LinkGain {
    pub fn new(pathloss_db: f64, shadow_db: f64) -> Self {
        Self {
            pathloss_db,
            shadow_db,
            gain: db_to_linear(-(pathloss_db + shadow_db)),
        }
    }
}

/// AWGN over one subchannel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub density_dbm_hz: f64,
    pub bandwidth_hz: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            density_dbm_hz: DEFAULT_NOISE_DENSITY_DBM_HZ,
            bandwidth_hz: SUBCHANNEL_HZ,
        }
    }
}

impl NoiseModel {
    /// Noise power in mW.
    pub fn power_mw(&self) -> f64 {
        db_to_linear(self.density_dbm_hz + linear_to_db(self.bandwidth_hz))
    }
}

/// NOMA SINR: `P g / (sum_k P_k g_k + noise)`.
///
/// `interferers` holds the co-located signals that the receiver cannot
/// cancel, as `(power, gain)` pairs.
pub fn sinr(
    own_power: f64,
    own_gain: f64,
    interferers: &[(f64, f64)],
    noise: f64,
) -> Result<f64, RadioError> {
    if own_power.is_nan() || own_power < 0.0 {
        return Err(invalid(
            "own_power",
            format!("must be non-negative, got {own_power}"),
        ));
    }
    if !(noise > 0.0) {
        return Err(invalid("noise", format!("must be positive, got {noise}")));
    }
    let mut interference = 0.0;
    for &(p, g) in interferers {
        if p.is_nan() || p < 0.0 {
            return Err(invalid(
                "interferer power",
                format!("must be non-negative, got {p}"),
            ));
        }
        interference += p * g;
    }
    Ok(own_power * own_gain / (interference + noise))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub cqi_index: u8,
    pub min_sinr_db: f64,
    pub bits_per_fraction: u32,
}

impl McsEntry {
    pub fn min_sinr_linear(&self) -> f64 {
        if self.min_sinr_db == f64::NEG_INFINITY {
            0.0
        } else {
            db_to_linear(self.min_sinr_db)
        }
    }
}

/// Monotone SINR-to-capacity map.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
    thresholds: Vec<f64>,
}

impl Default for McsTable {
    fn default() -> Self {
        Self::parse(DEFAULT_MCS_TABLE).expect("bundled MCS table is valid")
    }
}

impl McsTable {
    /// Builds a table from entries sorted by CQI index.
    pub fn from_entries(entries: Vec<McsEntry>) -> Result<Self, RadioError> {
        let bad = |line: usize, reason: &str| RadioError::McsTable {
            line,
            reason: reason.to_string(),
        };
        if entries.is_empty() {
            return Err(bad(0, "table is empty"));
        }
        if entries[0].cqi_index != 0 || entries[0].bits_per_fraction != 0 {
            return Err(bad(1, "first entry must be CQI 0 with zero capacity"));
        }
        for (i, w) in entries.windows(2).enumerate() {
            if w[1].cqi_index != w[0].cqi_index + 1 {
                return Err(bad(i + 2, "CQI indices must be consecutive"));
            }
            if !(w[1].min_sinr_db > w[0].min_sinr_db) {
                return Err(bad(i + 2, "thresholds must be strictly increasing"));
            }
            if w[1].bits_per_fraction < w[0].bits_per_fraction {
                return Err(bad(i + 2, "capacity must be non-decreasing"));
            }
        }
        let thresholds = entries.iter().map(|e| e.min_sinr_linear()).collect();
        Ok(Self {
            entries,
            thresholds,
        })
    }

    /// Parses the whitespace-separated `cqi_index min_sinr_db bits_per_fraction`
    /// format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RadioError> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| RadioError::McsTable {
                line: n + 1,
                reason,
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 columns, found {}", cols.len())));
            }
            let cqi_index = cols[0]
                .parse()
                .map_err(|e| err(format!("cqi_index: {e}")))?;
            let min_sinr_db = cols[1]
                .parse()
                .map_err(|e| err(format!("min_sinr_db: {e}")))?;
            let bits_per_fraction = cols[2]
                .parse()
                .map_err(|e| err(format!("bits_per_fraction: {e}")))?;
            entries.push(McsEntry {
                cqi_index,
                min_sinr_db,
                bits_per_fraction,
            });
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, RadioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RadioError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# cqi_index min_sinr_db bits_per_fraction\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{} {} {}\n",
                e.cqi_index, e.min_sinr_db, e.bits_per_fraction
            ));
        }
        out
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn get(&self, cqi_index: u8) -> Option<&McsEntry> {
        self.entries.get(cqi_index as usize)
    }

    pub fn top(&self) -> &McsEntry {
        self.entries.last().expect("non-empty")
    }

    /// Highest entry whose threshold does not exceed `sinr_db`.
    pub fn mcs_from_sinr(&self, sinr_db: f64) -> &McsEntry {
        let idx = self.entries.partition_point(|e| e.min_sinr_db <= sinr_db);
        &self.entries[idx.saturating_sub(1)]
    }

    /// Same lookup for a linear SINR.
    pub fn mcs_from_sinr_linear(&self, sinr: f64) -> &McsEntry {
        let idx = self.thresholds.partition_point(|&t| t <= sinr);
        &self.entries[idx.saturating_sub(1)]
    }

    /// Linear SINR threshold of an entry.
    pub fn threshold(&self, cqi_index: u8) -> f64 {
        self.thresholds[cqi_index as usize]
    }
}

/// Minimum transmit power outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerOutcome {
    Feasible(f64),
    /// The MCS would need more than the full budget.
    Infeasible {
        required: f64,
    },
}

impl PowerOutcome {
    pub fn feasible(self) -> Option<f64> {
        match self {
            PowerOutcome::Feasible(p) => Some(p),
            PowerOutcome::Infeasible { .. } => None,
        }
    }
}

/// Smallest power (fraction of `P_M`) that lifts a group with worst-member
/// gain `group_gain` to `min_sinr` given received `interference` and `noise`.
pub fn p_min_linear(min_sinr: f64, group_gain: f64, interference: f64, noise: f64) -> PowerOutcome {
    debug_assert!(group_gain > 0.0);
    let floor = interference + noise;
    let mut p = min_sinr * floor / group_gain;
    // Round-off can leave the SINR a hair under the threshold.
    while p * group_gain / floor < min_sinr {
        p = p.next_up();
    }
    if p > 1.0 {
        PowerOutcome::Infeasible { required: p }
    } else {
        PowerOutcome::Feasible(p)
    }
}

pub fn p_min(mcs: &McsEntry, group_gain: f64, interference: f64, noise: f64) -> PowerOutcome {
    p_min_linear(mcs.min_sinr_linear(), group_gain, interference, noise)
}

/// The weakest in-range member gain, or `None` when nobody is in range.
pub fn group_gain<I>(members: I, ap: ApId, gains: &GainTable) -> Option<f64>
where
    I: IntoIterator<Item = VehicleId>,
{
    members
        .into_iter()
        .filter_map(|v| gains.get(v, ap))
        .min_by(|a, b| a.total_cmp(b))
}

/// Effective gains (full-power SNR) of in-range vehicle/AP pairs.
#[derive(Debug, Clone, Default)]
pub struct GainTable {
    gains: BTreeMap<(VehicleId, ApId), f64>,
}

impl GainTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, vehicle: VehicleId, ap: ApId, gain: f64) {
        self.gains.insert((vehicle, ap), gain);
    }

    pub fn get(&self, vehicle: VehicleId, ap: ApId) -> Option<f64> {
        self.gains.get(&(vehicle, ap)).copied()
    }

    pub fn clear(&mut self) {
        self.gains.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqiReport {
    pub vehicle_id: VehicleId,
    pub ap_id: ApId,
    pub timestamp_ms: u64,
    pub per_subchannel_sinr_db: Vec<f64>,
}

impl CqiReport {
    /// Full-power SINR per subchannel, quantized to [`CQI_STEP_DB`].
    pub fn measure(
        vehicle_id: VehicleId,
        ap_id: ApId,
        timestamp_ms: u64,
        subchannels: usize,
        tx_power_per_subchannel_mw: f64,
        link: &LinkGain,
        noise_mw: f64,
    ) -> Self {
        let snr_db = linear_to_db(tx_power_per_subchannel_mw * link.gain / noise_mw);
        let q = quantize_db(snr_db);
        Self {
            vehicle_id,
            ap_id,
            timestamp_ms,
            per_subchannel_sinr_db: vec![q; subchannels],
        }
    }

    /// Effective gain per subchannel with noise normalized to one.
    pub fn effective_gains(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_subchannel_sinr_db
            .iter()
            .map(|&db| db_to_linear(db))
    }
}

pub fn quantize_db(db: f64) -> f64 {
    (db / CQI_STEP_DB).round() * CQI_STEP_DB
}

/// Number of subchannels in one direction of an access point's band.
pub fn subchannels_for(half_bandwidth_mhz: f64, overhead: f64) -> usize {
    ((half_bandwidth_mhz * 1e6 * overhead) / SUBCHANNEL_HZ + 1e-9).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pathloss_clamps_below_floor() {
        let at_floor = pathloss_db(PathlossModel::Uma, 10.0, 2.0).unwrap();
        let below = pathloss_db(PathlossModel::Uma, 5.0, 2.0).unwrap();
        assert_eq!(at_floor, below);
    }

    #[test]
    fn pathloss_grows_with_distance() {
        let a = pathloss_db(PathlossModel::Uma, 100.0, 2.0).unwrap();
        let b = pathloss_db(PathlossModel::Uma, 200.0, 2.0).unwrap();
        assert!(b > a);
    }

    #[test]
    fn pathloss_matches_hand_evaluation() {
        // 28 + 22*2 + 20*log10(2) = 72 + 6.020599913...
        let uma = pathloss_db(PathlossModel::Uma, 100.0, 2.0).unwrap();
        assert!((uma - 78.020_599_913_279_62).abs() < 1e-9, "{uma}");
        // 32.4 + 21*log10(50) + 20*log10(3.5) = 32.4 + 35.678718 + 10.881361
        let umi = pathloss_db(PathlossModel::Umi, 50.0, 3.5).unwrap();
        assert!((umi - 78.959_730_978_061_91).abs() < 1e-9, "{umi}");
    }

    #[test]
    fn pathloss_rejects_bad_frequency() {
        assert!(matches!(
            pathloss_db(PathlossModel::Umi, 100.0, 0.0),
            Err(RadioError::InvalidParameter {
                name: "carrier_ghz",
                ..
            })
        ));
        assert!(pathloss_db(PathlossModel::Umi, 100.0, -3.5).is_err());
    }

    #[test]
    fn sinr_examples() {
        assert_eq!(sinr(1.0, 1.0, &[], 1.0).unwrap(), 1.0);
        assert_eq!(sinr(0.0, 1.0, &[], 1.0).unwrap(), 0.0);
        let v = sinr(0.8, 1e-6, &[(0.2, 1e-6)], 1e-9).unwrap();
        let oracle = 0.8e-6 / (0.2e-6 + 1e-9);
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 3.980).abs() < 1e-3);
    }

    #[test]
    fn sinr_rejects_negative_power() {
        assert!(sinr(-0.1, 1.0, &[], 1.0).is_err());
        assert!(sinr(0.1, 1.0, &[(-1.0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn mcs_lookup_edges() {
        let t = McsTable::default();
        let low = t.mcs_from_sinr(-40.0);
        assert_eq!((low.cqi_index, low.bits_per_fraction), (0, 0));
        assert_eq!(t.mcs_from_sinr(60.0).cqi_index, 15);
        let seventh = t.get(7).unwrap().min_sinr_db;
        assert_eq!(t.mcs_from_sinr(seventh).cqi_index, 7);
        assert_eq!(t.mcs_from_sinr(seventh - 1e-9).cqi_index, 6);
    }

    #[test]
    fn bundled_table_shape() {
        let t = McsTable::default();
        assert_eq!(t.entries().len(), 16);
        assert_eq!(t.get(1).unwrap().min_sinr_db, -6.0);
        let reparsed = McsTable::parse(&t.render()).unwrap();
        assert_eq!(reparsed, t);
    }

    #[test]
    fn table_validation() {
        let e = |i, s, b| McsEntry {
            cqi_index: i,
            min_sinr_db: s,
            bits_per_fraction: b,
        };
        assert!(McsTable::from_entries(vec![]).is_err());
        assert!(McsTable::from_entries(vec![e(0, f64::NEG_INFINITY, 5)]).is_err());
        assert!(McsTable::from_entries(vec![
            e(0, f64::NEG_INFINITY, 0),
            e(1, 2.0, 10),
            e(2, 2.0, 20)
        ])
        .is_err());
        assert!(McsTable::from_entries(vec![
            e(0, f64::NEG_INFINITY, 0),
            e(1, 2.0, 10),
            e(2, 3.0, 5)
        ])
        .is_err());
        assert!(McsTable::parse("0 -inf 0\n1 x 4\n").is_err());
    }

    fn entry_with_linear(min_sinr: f64) -> McsEntry {
        McsEntry {
            cqi_index: 1,
            min_sinr_db: linear_to_db(min_sinr),
            bits_per_fraction: 10,
        }
    }

    #[test]
    fn p_min_examples() {
        let p = p_min(&entry_with_linear(1.0), 1.0, 0.0, 0.5)
            .feasible()
            .unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!(matches!(
            p_min(&entry_with_linear(4.0), 1.0, 0.0, 0.5),
            PowerOutcome::Infeasible { required } if (required - 2.0).abs() < 1e-12
        ));
        // 2 * 0.1e-6 / 1e-6
        let p = p_min_linear(2.0, 1e-6, 0.1e-6, 0.0).feasible().unwrap();
        assert!((p - 0.2).abs() < 1e-12);
    }

    #[test]
    fn group_gain_takes_weakest_member() {
        let ap = ApId(0);
        let mut g = GainTable::new();
        for (v, x) in [(1, 0.5), (2, 0.2), (3, 0.9)] {
            g.insert(VehicleId(v), ap, x);
        }
        assert_eq!(group_gain([1, 2, 3].map(VehicleId), ap, &g), Some(0.2));
        assert_eq!(group_gain([VehicleId(3)], ap, &g), Some(0.9));
        assert_eq!(group_gain([VehicleId(9)], ap, &g), None);
    }

    #[test]
    fn cqi_report_is_quantized() {
        let link = LinkGain::new(90.0, 1.234);
        let r = CqiReport::measure(VehicleId(1), ApId(0), 100, 4, 1.0, &link, 1e-12);
        assert_eq!(r.per_subchannel_sinr_db.len(), 4);
        let v = r.per_subchannel_sinr_db[0];
        assert!(((v / CQI_STEP_DB) - (v / CQI_STEP_DB).round()).abs() < 1e-9);
        assert!((link.gain - db_to_linear(-91.234)).abs() < 1e-20);
    }

    #[test]
    fn subchannel_count() {
        assert_eq!(subchannels_for(10.0, 0.9), 50);
        assert_eq!(subchannels_for(5.0, 0.9), 25);
        assert_eq!(subchannels_for(0.0, 0.9), 0);
    }

    #[test]
    fn noise_model_default() {
        let n = NoiseModel::default().power_mw();
        assert!((linear_to_db(n) - (-174.0 + linear_to_db(180e3))).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn sinr_monotone(p in 0.0f64..1.0, dp in 0.0f64..1.0, g in 1e-3f64..1e3,
                         ip in 0.0f64..1.0, dip in 0.0f64..1.0, ig in 1e-3f64..1e3, n in 1e-3f64..10.0) {
            let base = sinr(p, g, &[(ip, ig)], n).unwrap();
            prop_assert!(sinr(p + dp, g, &[(ip, ig)], n).unwrap() >= base);
            prop_assert!(sinr(p, g, &[(ip + dip, ig)], n).unwrap() <= base);
        }

        #[test]
        fn mcs_monotone(a in -50.0f64..60.0, b in -50.0f64..60.0) {
            let t = McsTable::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t.mcs_from_sinr(lo).cqi_index <= t.mcs_from_sinr(hi).cqi_index);
        }

        #[test]
        fn p_min_inverts_sinr(gamma in 1e-2f64..1e3, g in 1e-3f64..1e4, i in 0.0f64..1.0, n in 1e-4f64..1.0) {
            if let PowerOutcome::Feasible(p) = p_min_linear(gamma, g, i, n) {
                let s = sinr(p, g, &[(1.0, i)], n).unwrap();
                prop_assert!(s >= gamma);
                prop_assert!((s - gamma) <= 1e-9 * gamma);
            }
        }

        #[test]
        fn pathloss_increasing(d in 10.0f64..5000.0, step in 0.01f64..100.0) {
            for (m, f) in [(PathlossModel::Uma, 2.0), (PathlossModel::Umi, 3.5)] {
                prop_assert!(pathloss_db(m, d + step, f).unwrap() > pathloss_db(m, d, f).unwrap());
            }
        }
    }
}
