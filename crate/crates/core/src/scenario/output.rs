use crate::sim::{summarize, AllocatorKind, ClassSummary, DeploymentMode, MetricsRecord, RunStats};
use crate::traffic::Priority;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FLOW_COLUMNS: [&str; 9] = [
    "flow_id",
    "group_id",
    "priority_origin",
    "mode",
    "created_s",
    "transfer_ms",
    "e2e_ms",
    "queue_ms",
    "timed_out",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: header must be `{}`", FLOW_COLUMNS.join(","))]
    Header { path: PathBuf },
}

/// Run parameters echoed into the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub mode: DeploymentMode,
    pub allocator: AllocatorKind,
    pub seed: u64,
    pub vehicles: usize,
    pub duration_s: f64,
    pub stats: RunStats,
}

#[derive(Serialize)]
struct Summary<'a> {
    run: &'a RunInfo,
    classes: BTreeMap<&'static str, BTreeMap<&'static str, ClassSummary>>,
}

/// TOML summary: the run parameters and, per mode and priority class, the
/// flow counts, mean times and timeout ratio.
pub fn render_summary(log: &[MetricsRecord], info: &RunInfo) -> String {
    let mut classes: BTreeMap<&'static str, BTreeMap<&'static str, ClassSummary>> = BTreeMap::new();
    for p in Priority::ORDER {
        classes
            .entry(info.mode.as_str())
            .or_default()
            .insert(p.as_str(), ClassSummary::default());
    }
    for ((mode, p), s) in summarize(log) {
        classes
            .entry(mode.as_str())
            .or_default()
            .insert(p.as_str(), s);
    }
    toml::to_string(&Summary { run: info, classes }).expect("summaries always serialize")
}

/// Writes `flows.csv` (one row per delivered flow record, header always
/// present) and `summary.toml` into `dir`, creating it if needed.
pub fn write_results(dir: &Path, log: &[MetricsRecord], info: &RunInfo) -> Result<(), OutputError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| OutputError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let flows = dir.join("flows.csv");
    let csv_err = |source| OutputError::Csv {
        path: flows.clone(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&flows)
        .map_err(csv_err)?;
    w.write_record(FLOW_COLUMNS).map_err(csv_err)?;
    for r in log {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io(&flows))?;
    let summary = dir.join("summary.toml");
    std::fs::write(&summary, render_summary(log, info)).map_err(io(&summary))?;
    Ok(())
}

pub fn read_flows(path: &Path) -> Result<Vec<MetricsRecord>, OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    if r.headers().map_err(csv_err)?.iter().ne(FLOW_COLUMNS) {
        return Err(OutputError::Header {
            path: path.to_path_buf(),
        });
    }
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}
