//! Scenario configuration, mobility input and result files.

mod config;
mod output;
mod run;
mod trace;

pub use config::{
    load_config, parse_config, ConfigError, CorridorSpec, CriticalSpec, GeneralSpec, MacrocellSpec,
    RoadsideSpec, ScenarioConfig, TopologySpec, TrafficSpec,
};
pub use output::{read_flows, render_summary, write_results, OutputError, RunInfo, FLOW_COLUMNS};
pub use run::{run_scenario, scenario_mobility, RunError, SYNTH_STEP_S};
pub use trace::{load_trace, parse_trace, synth_mobility, Corridor, TraceError, TRACE_HEADER};
