use super::config::{ConfigError, ScenarioConfig};
use super::output::RunInfo;
use super::trace::{synth_mobility, TraceError};
use crate::sim::{Engine, RunOutput, SimError, Timeline};
use std::sync::Arc;
use thiserror::Error;

/// Sampling period of synthetic mobility.
pub const SYNTH_STEP_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Synthetic corridor mobility covering the run and its drain phase.
pub fn scenario_mobility(cfg: &ScenarioConfig) -> Result<Timeline, TraceError> {
    let horizon = cfg.duration_s + cfg.timeout_ms / 1000.0 + 1.0;
    synth_mobility(&cfg.corridor, cfg.seed, horizon, SYNTH_STEP_S)
}

/// Runs one scenario over `timeline`, or over synthetic corridor mobility
/// when none is given.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    timeline: Option<Timeline>,
) -> Result<(RunOutput, RunInfo), RunError> {
    cfg.validate()?;
    let timeline = match timeline {
        Some(t) => t,
        None => scenario_mobility(cfg)?,
    };
    let vehicles = timeline.len();
    let engine = Engine::new(
        cfg.sim_config(),
        cfg.topology()?,
        timeline,
        Arc::new(cfg.mcs()?),
    )?;
    let out = engine.run();
    let info = RunInfo {
        mode: cfg.mode,
        allocator: cfg.allocator,
        seed: cfg.seed,
        vehicles,
        duration_s: cfg.duration_s,
        stats: out.stats,
    };
    Ok((out, info))
}
