use crate::allocator::SolverConfig;
use crate::radio::{McsTable, PathlossModel, Position, RadioError};
use crate::sim::{
    AllocatorKind, ApClass, CriticalTarget, DeploymentMode, SimConfig, Topology, TopologyError,
};
use crate::traffic::{FairnessParams, TrafficClass, TrafficProfile};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Mcs(#[from] RadioError),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

macro_rules! ap_spec {
    ($name:ident, $default:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            pub bandwidth_mhz: f64,
            pub tx_power_dbm: f64,
            pub range_m: f64,
            pub carrier_ghz: f64,
            pub model: PathlossModel,
        }

        impl Default for $name {
            fn default() -> Self {
                let c: ApClass = $default;
                Self {
                    bandwidth_mhz: c.bandwidth_mhz,
                    tx_power_dbm: c.tx_power_dbm,
                    range_m: c.range_m,
                    carrier_ghz: c.carrier_ghz,
                    model: c.model,
                }
            }
        }

        impl From<$name> for ApClass {
            fn from(s: $name) -> Self {
                ApClass {
                    bandwidth_mhz: s.bandwidth_mhz,
                    tx_power_dbm: s.tx_power_dbm,
                    range_m: s.range_m,
                    carrier_ghz: s.carrier_ghz,
                    model: s.model,
                }
            }
        }
    };
}

ap_spec!(MacrocellSpec, ApClass::macrocell());
ap_spec!(RoadsideSpec, ApClass::roadside());

macro_rules! profile_spec {
    ($name:ident, $default:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            pub min_bytes: u32,
            pub max_bytes: u32,
            pub rate_pps: f64,
            /// Nominal offered rate per vehicle, reported only.
            pub bit_rate_kbps: f64,
        }

        impl Default for $name {
            fn default() -> Self {
                let p: TrafficProfile = $default;
                Self {
                    min_bytes: p.min_bytes,
                    max_bytes: p.max_bytes,
                    rate_pps: p.rate_pps,
                    bit_rate_kbps: p.bit_rate_kbps,
                }
            }
        }

        impl $name {
            fn profile(&self, class: TrafficClass) -> TrafficProfile {
                let avg_bytes = (self.min_bytes as f64 + self.max_bytes as f64) / 2.0;
                TrafficProfile {
                    class,
                    min_bytes: self.min_bytes,
                    max_bytes: self.max_bytes,
                    avg_bytes,
                    rate_pps: self.rate_pps,
                    bit_rate_kbps: self.bit_rate_kbps,
                }
            }
        }
    };
}

profile_spec!(CriticalSpec, TrafficProfile::critical());
profile_spec!(GeneralSpec, TrafficProfile::general());

/// Access point positions along the default corridor: two macrocells whose
/// coverage meets mid-road, five roadside units between the lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySpec {
    pub bs: Vec<[f64; 2]>,
    pub rsu: Vec<[f64; 2]>,
    pub bs_class: MacrocellSpec,
    pub rsu_class: RoadsideSpec,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            bs: vec![[450.0, -20.0], [1350.0, -20.0]],
            rsu: vec![
                [150.0, 10.0],
                [450.0, 10.0],
                [750.0, 10.0],
                [1200.0, 10.0],
                [1650.0, 10.0],
            ],
            bs_class: MacrocellSpec::default(),
            rsu_class: RoadsideSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficSpec {
    pub critical: CriticalSpec,
    pub general: GeneralSpec,
}

/// Looped two-lane corridor: eastbound along `y = 0` from `x = 0` to
/// `length_m`, westbound along `y = 2 * turn_radius_m`, joined by half turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorridorSpec {
    pub vehicles: usize,
    pub length_m: f64,
    pub turn_radius_m: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

impl Default for CorridorSpec {
    fn default() -> Self {
        Self {
            vehicles: 100,
            length_m: 1800.0,
            turn_radius_m: 10.0,
            speed_min_mps: 8.0,
            speed_max_mps: 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub mode: DeploymentMode,
    pub allocator: AllocatorKind,
    pub cqi_interval_ms: u64,
    pub timeout_ms: f64,
    pub processing_ms: f64,
    pub fairness_tc: f64,
    pub shadowing_db: f64,
    pub noise_density_dbm_hz: f64,
    pub overhead: f64,
    pub critical_target: CriticalTarget,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_count: Option<usize>,
    /// Node budget of the optimal allocator per subframe.
    pub node_budget: u64,
    /// MCS table file; the bundled table when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcs_table: Option<PathBuf>,
    pub drain: bool,
    pub topology: TopologySpec,
    pub traffic: TrafficSpec,
    pub corridor: CorridorSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed: sim.seed,
            duration_s: sim.duration_s,
            mode: sim.mode,
            allocator: sim.allocator,
            cqi_interval_ms: sim.cqi_interval_ms,
            timeout_ms: sim.timeout_ms,
            processing_ms: sim.processing_ms,
            fairness_tc: sim.fairness.t_c,
            shadowing_db: sim.shadowing_db,
            noise_density_dbm_hz: sim.noise_density_dbm_hz,
            overhead: sim.overhead,
            critical_target: sim.critical_target,
            group_count: sim.group_count,
            node_budget: sim.solver.node_budget,
            mcs_table: None,
            drain: sim.drain,
            topology: TopologySpec::default(),
            traffic: TrafficSpec::default(),
            corridor: CorridorSpec::default(),
        }
    }
}

fn check(ok: bool, key: &str, reason: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(key, reason()))
    }
}

fn positive(v: f64, key: &str) -> Result<(), ConfigError> {
    check(v > 0.0 && v.is_finite(), key, || {
        format!("must be positive, got {v}")
    })
}

fn non_negative(v: f64, key: &str) -> Result<(), ConfigError> {
    check(v >= 0.0 && v.is_finite(), key, || {
        format!("must be non-negative, got {v}")
    })
}

/// Parses a TOML scenario, filling absent keys with the defaults and
/// rejecting unknown ones.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl ScenarioConfig {
    pub fn render(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        non_negative(self.duration_s, "duration_s")?;
        check(self.cqi_interval_ms > 0, "cqi_interval_ms", || {
            "must be positive".into()
        })?;
        positive(self.timeout_ms, "timeout_ms")?;
        non_negative(self.processing_ms, "processing_ms")?;
        check(
            self.fairness_tc >= 1.0 && self.fairness_tc.is_finite(),
            "fairness_tc",
            || format!("must be >= 1, got {}", self.fairness_tc),
        )?;
        non_negative(self.shadowing_db, "shadowing_db")?;
        check(
            self.noise_density_dbm_hz.is_finite(),
            "noise_density_dbm_hz",
            || "must be finite".into(),
        )?;
        check(
            self.overhead > 0.0 && self.overhead <= 1.0,
            "overhead",
            || format!("must lie in (0, 1], got {}", self.overhead),
        )?;
        check(self.node_budget > 0, "node_budget", || {
            "must be positive".into()
        })?;
        for (prefix, c) in [
            ("topology.bs_class", ApClass::from(self.topology.bs_class)),
            ("topology.rsu_class", ApClass::from(self.topology.rsu_class)),
        ] {
            positive(c.bandwidth_mhz, &format!("{prefix}.bandwidth_mhz"))?;
            positive(c.range_m, &format!("{prefix}.range_m"))?;
            positive(c.carrier_ghz, &format!("{prefix}.carrier_ghz"))?;
            check(
                c.tx_power_dbm.is_finite(),
                &format!("{prefix}.tx_power_dbm"),
                || "must be finite".into(),
            )?;
        }
        check(!self.topology.bs.is_empty(), "topology.bs", || {
            "needs at least one base station".into()
        })?;
        for (key, list) in [
            ("topology.bs", &self.topology.bs),
            ("topology.rsu", &self.topology.rsu),
        ] {
            check(list.iter().flatten().all(|v| v.is_finite()), key, || {
                "positions must be finite".into()
            })?;
        }
        for (key, p) in [
            (
                "traffic.critical",
                (
                    self.traffic.critical.min_bytes,
                    self.traffic.critical.max_bytes,
                    self.traffic.critical.rate_pps,
                ),
            ),
            (
                "traffic.general",
                (
                    self.traffic.general.min_bytes,
                    self.traffic.general.max_bytes,
                    self.traffic.general.rate_pps,
                ),
            ),
        ] {
            check(p.0 > 0, &format!("{key}.min_bytes"), || {
                "must be positive".into()
            })?;
            check(p.0 <= p.1, &format!("{key}.max_bytes"), || {
                format!("must be >= min_bytes {}", p.0)
            })?;
            non_negative(p.2, &format!("{key}.rate_pps"))?;
        }
        let c = &self.corridor;
        positive(c.length_m, "corridor.length_m")?;
        positive(c.turn_radius_m, "corridor.turn_radius_m")?;
        positive(c.speed_min_mps, "corridor.speed_min_mps")?;
        check(
            c.speed_max_mps >= c.speed_min_mps && c.speed_max_mps.is_finite(),
            "corridor.speed_max_mps",
            || format!("must be finite and >= speed_min_mps {}", c.speed_min_mps),
        )?;
        if let Some(n) = self.group_count {
            let needed =
                crate::traffic::min_group_count(c.vehicles, crate::traffic::MAX_GROUP_SIZE);
            check(n >= needed, "group_count", || {
                format!(
                    "{n} groups cannot hold {} vehicles at {} per group",
                    c.vehicles,
                    crate::traffic::MAX_GROUP_SIZE
                )
            })?;
        }
        self.topology()?;
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        let pos = |v: &Vec<[f64; 2]>| {
            v.iter()
                .map(|p| Position::new(p[0], p[1]))
                .collect::<Vec<_>>()
        };
        Ok(Topology::new(
            &pos(&self.topology.bs),
            self.topology.bs_class.into(),
            &pos(&self.topology.rsu),
            self.topology.rsu_class.into(),
        )?)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            mode: self.mode,
            allocator: self.allocator,
            seed: self.seed,
            duration_s: self.duration_s,
            cqi_interval_ms: self.cqi_interval_ms,
            timeout_ms: self.timeout_ms,
            processing_ms: self.processing_ms,
            fairness: FairnessParams {
                t_c: self.fairness_tc,
            },
            critical: self.traffic.critical.profile(TrafficClass::Critical),
            general: self.traffic.general.profile(TrafficClass::General),
            critical_target: self.critical_target,
            group_count: self.group_count,
            shadowing_db: self.shadowing_db,
            noise_density_dbm_hz: self.noise_density_dbm_hz,
            overhead: self.overhead,
            solver: SolverConfig {
                node_budget: self.node_budget,
                ..SolverConfig::default()
            },
            drain: self.drain,
        }
    }

    pub fn mcs(&self) -> Result<McsTable, ConfigError> {
        match &self.mcs_table {
            Some(p) => Ok(McsTable::load(p)?),
            None => Ok(McsTable::default()),
        }
    }
}
