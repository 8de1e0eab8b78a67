//! Event log, snapshots, and offline analyses over logged generation events.
//!
//! The log is line-delimited JSON. The first line is a header; every other
//! line is a generation event, a scheduler transition, or a seeding report.

mod analysis;
mod tables;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{CellIndex, Direction, InsertOutcome, ProgramId};
use crate::evaluation::FailureKind;
use crate::seeding::SeedEvaluation;

pub use analysis::{
    distance_k_grid, prefix_stats, quantile, rank_group, rank_profile, summarize, tier_assignment,
    topm_replay, GridRow, PrefixStats, RankGroup, RankProfile, RankRow, ScatterRow, Summary,
    TopmRow, DECILES, TIERS,
};
pub use tables::{grid_table, rank_table, scatter_table, topm_table};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub run_id: String,
    pub seed: u64,
    pub direction: Direction,
    pub islands: usize,
    pub k_set: Vec<u32>,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub rank: usize,
    pub valid: bool,
    #[serde(default)]
    pub score: Option<f64>,
    /// Oriented improvement over the parent; present iff `valid`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub cell_index: Option<CellIndex>,
    #[serde(default)]
    pub failure: Option<FailureKind>,
    #[serde(default)]
    pub outcome: Option<InsertOutcome>,
    #[serde(default)]
    pub program_id: Option<ProgramId>,
    pub stated_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationEvent {
    pub island_id: usize,
    pub iteration: u64,
    pub k_used: u32,
    pub parent_id: ProgramId,
    pub parent_score: f64,
    pub parent_cell: CellIndex,
    pub inspiration_ids: Vec<ProgramId>,
    pub inspiration_scores: Vec<f64>,
    pub candidates: Vec<CandidateRecord>,
    /// Distance from the parent to the best inspiration; absent without inspirations.
    #[serde(default)]
    pub pre_distance: Option<f64>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub requery_count: u32,
    #[serde(default)]
    pub backend_failure: Option<String>,
    /// Whether any insertion of this round filled or improved a cell.
    pub any_replacement: bool,
    /// Evaluation count after this event was committed.
    pub n_eval: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
}

impl GenerationEvent {
    /// Best oriented inspiration score, the key used for tier assignment.
    pub fn tier_key(&self, direction: Direction) -> f64 {
        self.inspiration_scores
            .iter()
            .map(|&s| direction.orient(s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn improved(&self) -> bool {
        self.candidates
            .iter()
            .any(|c| c.delta.is_some_and(|d| d > 0.0))
    }

    pub fn best_delta(&self) -> Option<f64> {
        self.candidates
            .iter()
            .filter_map(|c| c.delta)
            .reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KUpdateRecord {
    pub island_id: usize,
    pub iteration: u64,
    pub c: u32,
    pub k_before: u32,
    pub k_after: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedingRecord {
    pub island_id: usize,
    pub evaluations: Vec<SeedEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Seeding(SeedingRecord),
    Event(GenerationEvent),
    KUpdate(KUpdateRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandSnapshot {
    pub island_id: usize,
    pub coverage: usize,
    pub cell_quality: Option<f64>,
    pub best_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub n_eval_at_snapshot: u64,
    /// The milestone that triggered this snapshot; absent for the final one.
    pub milestone: Option<u64>,
    pub islands: Vec<IslandSnapshot>,
    pub global_best: Option<f64>,
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Analysis(String),
}

/// Serialized, flushed-per-record writer for line-delimited JSON.
pub struct JsonlSink {
    path: String,
    out: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self, TelemetryError> {
        let file = File::create(path).map_err(|source| TelemetryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            path: path.display().to_string(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<(), TelemetryError> {
        let line = serde_json::to_string(record).expect("log records serialize");
        let mut out = self.out.lock().expect("sink lock");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|source| TelemetryError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Appends one generation event to the log.
pub fn log_event(event: &GenerationEvent, sink: &JsonlSink) -> Result<(), TelemetryError> {
    sink.append(&LogRecord::Event(event.clone()))
}

/// Reads every record of a line-delimited file.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TelemetryError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| TelemetryError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TelemetryError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| TelemetryError::Parse {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// One run's log, split by record type.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub events: Vec<GenerationEvent>,
    pub k_updates: Vec<KUpdateRecord>,
    pub seeding: Vec<SeedingRecord>,
}

impl RunLog {
    pub fn direction(&self) -> Direction {
        self.header.direction
    }
}

pub fn read_log(path: &Path) -> Result<RunLog, TelemetryError> {
    let records: Vec<LogRecord> = read_jsonl(path)?;
    let mut iter = records.into_iter();
    let header = match iter.next() {
        Some(LogRecord::Header(h)) => h,
        _ => {
            return Err(TelemetryError::Parse {
                path: path.display().to_string(),
                line: 1,
                message: "log does not start with a header record".into(),
            })
        }
    };
    if header.schema_version != SCHEMA_VERSION {
        return Err(TelemetryError::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("unsupported schema version {}", header.schema_version),
        });
    }
    let mut log = RunLog {
        header,
        events: Vec::new(),
        k_updates: Vec::new(),
        seeding: Vec::new(),
    };
    for rec in iter {
        match rec {
            LogRecord::Event(e) => log.events.push(e),
            LogRecord::KUpdate(k) => log.k_updates.push(k),
            LogRecord::Seeding(s) => log.seeding.push(s),
            LogRecord::Header(_) => {}
        }
    }
    Ok(log)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn header(run_id: &str) -> LogHeader {
        LogHeader {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.into(),
            seed: 0,
            direction: Direction::Maximize,
            islands: 1,
            k_set: vec![1, 3, 5, 7],
            task: "test".into(),
        }
    }

    pub(crate) fn event(iteration: u64, deltas: &[Option<f64>]) -> GenerationEvent {
        GenerationEvent {
            island_id: 0,
            iteration,
            k_used: deltas.len() as u32,
            parent_id: ProgramId::new("p"),
            parent_score: 1.0,
            parent_cell: CellIndex(vec![2, 3]),
            inspiration_ids: vec![ProgramId::new("i")],
            inspiration_scores: vec![iteration as f64],
            candidates: deltas
                .iter()
                .enumerate()
                .map(|(j, d)| CandidateRecord {
                    rank: j + 1,
                    valid: d.is_some(),
                    score: d.map(|d| 1.0 + d),
                    delta: *d,
                    cell_index: d.map(|_| CellIndex(vec![2 + j, 3])),
                    failure: d.is_none().then_some(FailureKind::ConstraintViolation),
                    outcome: d.map(|_| InsertOutcome::Rejected),
                    program_id: None,
                    stated_probability: 1.0 / deltas.len() as f64,
                })
                .collect(),
            pre_distance: Some(iteration as f64),
            input_tokens: 10,
            output_tokens: 20,
            requery_count: 0,
            backend_failure: None,
            any_replacement: false,
            n_eval: 0,
            timestamp: None,
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let sink = JsonlSink::create(&path).unwrap();
        sink.append(&LogRecord::Header(header("r"))).unwrap();
        let e = event(0, &[Some(0.1), None]);
        log_event(&e, &sink).unwrap();
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        let mut empty = event(1, &[]);
        empty.requery_count = 1;
        log_event(&empty, &sink).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap().lines().count(),
            lines + 1
        );
        sink.append(&LogRecord::KUpdate(KUpdateRecord {
            island_id: 0,
            iteration: 3,
            c: 0,
            k_before: 5,
            k_after: 7,
        }))
        .unwrap();
        let log = read_log(&path).unwrap();
        assert_eq!(log.events, vec![e, empty]);
        assert_eq!(log.k_updates.len(), 1);
        assert_eq!(log.header.run_id, "r");
    }

    #[test]
    fn header_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let sink = JsonlSink::create(&path).unwrap();
        log_event(&event(0, &[]), &sink).unwrap();
        assert!(read_log(&path).is_err());
    }

    #[test]
    fn event_helpers() {
        let e = event(0, &[Some(-0.1), None, Some(0.3)]);
        assert!(e.improved());
        assert_eq!(e.best_delta(), Some(0.3));
        assert!(!event(0, &[None, Some(0.0)]).improved());
        let mut none = event(0, &[]);
        none.inspiration_scores.clear();
        assert_eq!(none.tier_key(Direction::Maximize), f64::NEG_INFINITY);
    }
}
