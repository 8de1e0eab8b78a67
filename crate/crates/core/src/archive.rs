//! Per-island MAP-Elites archives.
//!
//! A grid discretizes the feature space; every occupied cell keeps the single
//! best program that ever landed in it. Replacement is strict: a candidate that
//! only ties the occupant is rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::SchedulerState;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("feature vector has {got} dimensions, grid has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature {index} is not finite")]
    NonFiniteFeature { index: usize },
    #[error("program {0} has not been evaluated")]
    Unevaluated(ProgramId),
    #[error("program {0} is not valid")]
    Invalid(ProgramId),
    #[error("archive is empty")]
    EmptyArchive,
    #[error("invalid grid dimension {index}: {reason}")]
    InvalidGeometry { index: usize, reason: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line}: {source}")]
    Checkpoint {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    /// Maps a raw score onto a scale where larger is always better.
    pub fn orient(self, score: f64) -> f64 {
        match self {
            Direction::Maximize => score,
            Direction::Minimize => -score,
        }
    }

    /// True when `a` strictly beats `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        self.orient(a) > self.orient(b)
    }

    pub fn best(self, a: f64, b: f64) -> f64 {
        if self.better(b, a) {
            b
        } else {
            a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProgramId(pub String);

impl ProgramId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Seed,
    #[default]
    Generated,
    Reinjected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub id: ProgramId,
    pub body: String,
    pub score: Option<f64>,
    pub features: Vec<f64>,
    pub parent_id: Option<ProgramId>,
    pub island_id: usize,
    pub iteration_born: u64,
    pub origin: Origin,
    pub valid: bool,
}

impl Program {
    /// An unevaluated program.
    pub fn new(id: ProgramId, body: impl Into<String>, island_id: usize, origin: Origin) -> Self {
        Self {
            id,
            body: body.into(),
            score: None,
            features: Vec::new(),
            parent_id: None,
            island_id,
            iteration_born: 0,
            origin,
            valid: false,
        }
    }

    pub fn with_evaluation(mut self, score: f64, features: Vec<f64>) -> Self {
        self.score = Some(score);
        self.features = features;
        self.valid = true;
        self
    }

    pub fn is_evaluated(&self) -> bool {
        self.score.is_some()
    }
}

/// Geometry of one feature axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl Dim {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Self {
        Self { lower, upper, bins }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellIndex(pub Vec<usize>);

impl CellIndex {
    pub fn l1_distance(&self, other: &CellIndex) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.abs_diff(*b))
            .sum()
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Bins a feature vector: `floor(bins * (f - lo) / (hi - lo))`, clamped to `[0, bins - 1]`.
pub fn cell_index(features: &[f64], dims: &[Dim]) -> Result<CellIndex, ArchiveError> {
    if features.len() != dims.len() {
        return Err(ArchiveError::DimensionMismatch {
            expected: dims.len(),
            got: features.len(),
        });
    }
    features
        .iter()
        .zip(dims)
        .enumerate()
        .map(|(index, (&f, d))| {
            if !f.is_finite() {
                return Err(ArchiveError::NonFiniteFeature { index });
            }
            let raw = (d.bins as f64 * (f - d.lower) / (d.upper - d.lower)).floor();
            let top = (d.bins - 1) as f64;
            Ok(raw.clamp(0.0, top) as usize)
        })
        .collect::<Result<Vec<_>, _>>()
        .map(CellIndex)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsertOutcome {
    NewCell,
    Replaced,
    Rejected,
}

impl InsertOutcome {
    /// Whether this insertion changed the archive (counts as a scheduler update).
    pub fn is_update(self) -> bool {
        !matches!(self, InsertOutcome::Rejected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub coverage: usize,
    pub cell_quality: Option<f64>,
    pub best_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveGrid {
    dims: Vec<Dim>,
    direction: Direction,
    cells: BTreeMap<CellIndex, Program>,
}

impl ArchiveGrid {
    pub fn new(dims: Vec<Dim>, direction: Direction) -> Result<Self, ArchiveError> {
        for (index, d) in dims.iter().enumerate() {
            let reason = if d.bins == 0 {
                Some("bins must be positive")
            } else if !(d.lower.is_finite() && d.upper.is_finite()) {
                Some("bounds must be finite")
            } else if d.lower >= d.upper {
                Some("lower bound must be below upper bound")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(ArchiveError::InvalidGeometry {
                    index,
                    reason: reason.into(),
                });
            }
        }
        Ok(Self {
            dims,
            direction,
            cells: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, cell: &CellIndex) -> Option<&Program> {
        self.cells.get(cell)
    }

    /// Occupied cells in cell-index order.
    pub fn iter(&self) -> impl Iterator<Item = (&CellIndex, &Program)> {
        self.cells.iter()
    }

    pub fn cell_of(&self, program: &Program) -> Result<CellIndex, ArchiveError> {
        cell_index(&program.features, &self.dims)
    }

    pub fn insert(&mut self, program: Program) -> Result<InsertOutcome, ArchiveError> {
        let score = program
            .score
            .ok_or_else(|| ArchiveError::Unevaluated(program.id.clone()))?;
        if !program.valid || !score.is_finite() {
            return Err(ArchiveError::Invalid(program.id.clone()));
        }
        let cell = self.cell_of(&program)?;
        match self.cells.get(&cell) {
            None => {
                self.cells.insert(cell, program);
                Ok(InsertOutcome::NewCell)
            }
            Some(occupant) => {
                let incumbent = occupant.score.expect("occupants are evaluated");
                if self.direction.better(score, incumbent) {
                    self.cells.insert(cell, program);
                    Ok(InsertOutcome::Replaced)
                } else {
                    Ok(InsertOutcome::Rejected)
                }
            }
        }
    }

    pub fn best(&self) -> Option<&Program> {
        let dir = self.direction;
        self.cells
            .values()
            .fold(None, |best: Option<&Program>, p| match best {
                Some(b) if !dir.better(p.score.unwrap(), b.score.unwrap()) => Some(b),
                _ => Some(p),
            })
    }

    pub fn snapshot(&self) -> Snapshot {
        snapshot_scores(self.cells.values().filter_map(|p| p.score), self.direction)
    }

    /// Occupants ordered worst to best, ties broken by cell index.
    fn ranked(&self) -> Vec<&Program> {
        let dir = self.direction;
        let mut occupants: Vec<&Program> = self.cells.values().collect();
        // BTreeMap iteration already orders by cell, so a stable sort keeps that as tiebreak.
        occupants.sort_by(|a, b| {
            dir.orient(a.score.unwrap())
                .total_cmp(&dir.orient(b.score.unwrap()))
        });
        occupants
    }

    /// Softmax weights `exp(rank_weight * rank / (n - 1))` over the ranked occupants.
    fn rank_weights(n: usize, rank_weight: f64) -> Vec<f64> {
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        (0..n)
            .map(|r| (rank_weight * r as f64 / denom).exp())
            .collect()
    }

    /// Samples one occupant by rank-weighted softmax.
    pub fn sample_parent(
        &self,
        rng: &mut impl Rng,
        rank_weight: f64,
    ) -> Result<&Program, ArchiveError> {
        let ranked = self.ranked();
        if ranked.is_empty() {
            return Err(ArchiveError::EmptyArchive);
        }
        let weights = Self::rank_weights(ranked.len(), rank_weight);
        let dist = WeightedIndex::new(&weights).expect("softmax weights are positive");
        Ok(ranked[dist.sample(rng)])
    }

    /// Samples up to `n` distinct occupants other than `exclude`, without replacement.
    pub fn sample_inspirations(
        &self,
        rng: &mut impl Rng,
        n: usize,
        exclude: Option<&ProgramId>,
        rank_weight: f64,
    ) -> Vec<&Program> {
        let ranked = self.ranked();
        let weights = Self::rank_weights(ranked.len(), rank_weight);
        let mut pool: Vec<(&Program, f64)> = ranked
            .into_iter()
            .zip(weights)
            .filter(|(p, _)| Some(&p.id) != exclude)
            .collect();
        let mut picked = Vec::with_capacity(n.min(pool.len()));
        while picked.len() < n && !pool.is_empty() {
            let dist = WeightedIndex::new(pool.iter().map(|(_, w)| *w))
                .expect("softmax weights are positive");
            let (p, _) = pool.remove(dist.sample(rng));
            picked.push(p);
        }
        picked
    }

    /// One checkpoint record per occupied cell.
    pub fn checkpoint_records(&self, island_id: usize) -> Vec<CheckpointRecord> {
        self.cells
            .iter()
            .map(|(cell, p)| CheckpointRecord {
                island_id,
                cell_index: cell.clone(),
                program_id: p.id.clone(),
                score: p.score.unwrap(),
                features: p.features.clone(),
                body: p.body.clone(),
                parent_id: p.parent_id.clone(),
                iteration_born: p.iteration_born,
                origin: p.origin,
            })
            .collect()
    }

    /// Rebuilds an archive from checkpoint records of a single island.
    pub fn restore(
        dims: Vec<Dim>,
        direction: Direction,
        records: &[CheckpointRecord],
    ) -> Result<Self, ArchiveError> {
        let mut grid = Self::new(dims, direction)?;
        for r in records {
            let cell = cell_index(&r.features, &grid.dims)?;
            let program = r.to_program();
            grid.cells.insert(cell, program);
        }
        Ok(grid)
    }
}

/// Coverage, mean occupant score, and best score over a set of occupant scores.
pub fn snapshot_scores(scores: impl Iterator<Item = f64>, direction: Direction) -> Snapshot {
    let mut coverage = 0usize;
    let mut sum = 0.0;
    let mut best: Option<f64> = None;
    for s in scores {
        coverage += 1;
        sum += s;
        best = Some(best.map_or(s, |b| direction.best(b, s)));
    }
    Snapshot {
        coverage,
        cell_quality: (coverage > 0).then(|| sum / coverage as f64),
        best_score: best,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub island_id: usize,
    pub cell_index: CellIndex,
    pub program_id: ProgramId,
    pub score: f64,
    pub features: Vec<f64>,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<ProgramId>,
    #[serde(default)]
    pub iteration_born: u64,
    #[serde(default)]
    pub origin: Origin,
}

impl CheckpointRecord {
    pub fn to_program(&self) -> Program {
        Program {
            id: self.program_id.clone(),
            body: self.body.clone(),
            score: Some(self.score),
            features: self.features.clone(),
            parent_id: self.parent_id.clone(),
            island_id: self.island_id,
            iteration_born: self.iteration_born,
            origin: self.origin,
            valid: true,
        }
    }
}

pub fn write_checkpoint<'a>(
    mut out: impl Write,
    archives: impl IntoIterator<Item = (usize, &'a ArchiveGrid)>,
) -> Result<(), ArchiveError> {
    for (island_id, grid) in archives {
        for record in grid.checkpoint_records(island_id) {
            serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(input: impl BufRead) -> Result<Vec<CheckpointRecord>, ArchiveError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| ArchiveError::Checkpoint {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(records)
}

/// One island: its archive, its scheduler, and its private random stream.
#[derive(Debug, Clone)]
pub struct Island {
    pub id: usize,
    pub archive: ArchiveGrid,
    pub scheduler: SchedulerState,
    pub rng: ChaCha8Rng,
    /// Generation events executed on this island.
    pub iteration: u64,
}

impl Island {
    pub fn new(
        id: usize,
        archive: ArchiveGrid,
        scheduler: SchedulerState,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            id,
            archive,
            scheduler,
            rng,
            iteration: 0,
        }
    }

    pub fn sample_parent(&mut self, rank_weight: f64) -> Result<Program, ArchiveError> {
        self.archive
            .sample_parent(&mut self.rng, rank_weight)
            .cloned()
    }

    pub fn sample_inspirations(
        &mut self,
        n: usize,
        exclude: Option<&ProgramId>,
        rank_weight: f64,
    ) -> Vec<Program> {
        self.archive
            .sample_inspirations(&mut self.rng, n, exclude, rank_weight)
            .into_iter()
            .cloned()
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.archive.snapshot()
    }
}
