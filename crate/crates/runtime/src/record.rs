use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cellfree_core::agents::{LoopSnapshot, MonitorAction};
use serde::{Deserialize, Serialize};

use crate::error::{RuntimeError, Result};
use crate::run::Mode;

pub const RECORD_SCHEMA: &str = "cellfree.run.v1";

/// Wall-clock fields, excluded from reproducibility comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u64,
    pub loop_ms: Vec<f64>,
}

/// Append-only log of one run, one snapshot per loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub mode: Mode,
    pub num_users: usize,
    pub num_orus: usize,
    snapshots: Vec<LoopSnapshot>,
    pub timing: Timing,
}

impl RunRecord {
    pub fn new(scenario: &str, scenario_hash: &str, mode: Mode, num_users: usize, num_orus: usize) -> Self {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        Self {
            schema: RECORD_SCHEMA.into(),
            scenario: scenario.into(),
            scenario_hash: scenario_hash.into(),
            mode,
            num_users,
            num_orus,
            snapshots: Vec::new(),
            timing: Timing { started_unix_ms: started, loop_ms: Vec::new() },
        }
    }

    /// Appends the next loop; loop indices must increase.
    pub fn push(&mut self, snap: LoopSnapshot, elapsed_ms: f64) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if snap.loop_index <= last.loop_index {
                return Err(RuntimeError::Record(format!(
                    "loop {} recorded after loop {}",
                    snap.loop_index, last.loop_index
                )));
            }
        }
        if snap.rates_mbps.len() != self.num_users || snap.active.len() != self.num_orus {
            return Err(RuntimeError::Record("snapshot dimensions differ from the record".into()));
        }
        self.snapshots.push(snap);
        self.timing.loop_ms.push(elapsed_ms);
        Ok(())
    }

    pub fn snapshots(&self) -> &[LoopSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn summary(&self, viol_tol_mbps: f64) -> Summary {
        let n = self.snapshots.len();
        let last = self.snapshots.last();
        let count = |f: fn(&MonitorAction) -> bool| {
            self.snapshots.iter().map(|s| s.decision.actions.iter().filter(|a| f(a)).count()).sum()
        };
        Summary {
            scenario: self.scenario.clone(),
            mode: self.mode,
            loops: n,
            final_active: last.map_or(0, |s| s.active.iter().filter(|&&a| a).count()),
            final_active_fraction: last.map_or(0.0, |s| s.active_fraction),
            mean_active_fraction: if n == 0 {
                0.0
            } else {
                self.snapshots.iter().map(|s| s.active_fraction).sum::<f64>() / n as f64
            },
            final_violated_users: last.map_or_else(Vec::new, |s| {
                s.upsilon_mbps.iter().enumerate().filter(|(_, &u)| u > viol_tol_mbps).map(|(k, _)| k + 1).collect()
            }),
            final_violation_mbps: last.map_or(0.0, |s| s.upsilon_mbps.iter().sum()),
            memory_hits: self.snapshots.iter().filter(|s| s.memory_hit.is_some()).count(),
            boosts: count(|a| matches!(a, MonitorAction::BoostWeight(_))),
            raises: count(|a| matches!(a, MonitorAction::RaisePenalty(_))),
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: Mode,
    pub loops: usize,
    pub final_active: usize,
    pub final_active_fraction: f64,
    pub mean_active_fraction: f64,
    /// Numbered from 1.
    pub final_violated_users: Vec<usize>,
    pub final_violation_mbps: f64,
    pub memory_hits: usize,
    pub boosts: usize,
    pub raises: usize,
}

const SUMMARY_HEADER: [&str; 11] = [
    "scenario",
    "mode",
    "loops",
    "final_active",
    "final_active_fraction",
    "mean_active_fraction",
    "final_violated_users",
    "final_violation_mbps",
    "memory_hits",
    "boosts",
    "raises",
];

/// Column names of the per-loop series, in file order.
pub fn series_header(num_users: usize, num_orus: usize) -> Vec<String> {
    let mut h: Vec<String> = ["loop", "intent_kind", "energy_saving", "active_count", "active_fraction", "converged"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for name in ["rate_mbps", "r_min_mbps", "upsilon_mbps", "alpha", "mu", "lambda"] {
        h.extend((1..=num_users).map(|k| format!("{name}_{k}")));
    }
    h.extend((1..=num_orus).map(|l| format!("z_{l}")));
    h
}

pub fn write_series<W: Write>(record: &RunRecord, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(series_header(record.num_users, record.num_orus))?;
    for s in &record.snapshots {
        let mut row = vec![
            s.loop_index.to_string(),
            s.intent_kind.clone(),
            s.energy_saving.to_string(),
            s.active.iter().filter(|&&a| a).count().to_string(),
            s.active_fraction.to_string(),
            s.converged.to_string(),
        ];
        for v in [&s.rates_mbps, &s.r_min_mbps, &s.upsilon_mbps, &s.alpha, &s.mu, &s.lambda] {
            row.extend(v.iter().map(f64::to_string));
        }
        row.extend(s.active.iter().map(|&a| u8::from(a).to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summaries<W: Write>(rows: &[Summary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for s in rows {
        let users: Vec<String> = s.final_violated_users.iter().map(usize::to_string).collect();
        out.write_record([
            s.scenario.clone(),
            s.mode.to_string(),
            s.loops.to_string(),
            s.final_active.to_string(),
            s.final_active_fraction.to_string(),
            s.mean_active_fraction.to_string(),
            users.join(" "),
            s.final_violation_mbps.to_string(),
            s.memory_hits.to_string(),
            s.boosts.to_string(),
            s.raises.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFiles {
    pub series: PathBuf,
    pub summary: PathBuf,
}

/// Writes `<mode>_series.csv` and `<mode>_summary.csv` into `dir`.
pub fn export_metrics(record: &RunRecord, viol_tol_mbps: f64, dir: impl AsRef<Path>) -> Result<MetricsFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let series = dir.join(format!("{}_series.csv", record.mode));
    let summary = dir.join(format!("{}_summary.csv", record.mode));
    write_series(record, std::fs::File::create(&series)?)?;
    write_summaries(&[record.summary(viol_tol_mbps)], std::fs::File::create(&summary)?)?;
    Ok(MetricsFiles { series, summary })
}
