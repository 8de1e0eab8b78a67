//! Warm start from a pool of pre-scored programs.
//!
//! The pool is split into one group per island (randomly or by k-means over
//! program embeddings), optionally mixed across groups, and each group is
//! evaluated and inserted into its island's archive.

mod embed;
mod kmeans;
mod mix;
mod pool;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{ArchiveError, Island, Origin, Program, ProgramId};
use crate::evaluation::{self, BudgetLedger, EvalError, Evaluator, FailureKind};
use crate::rng;

pub use embed::{
    embed_pool, euclidean, EmbedderConfig, EmbeddingProvider, PrecomputedEmbedder, RemoteEmbedder,
    TrigramEmbedder, TRIGRAM_DIM,
};
pub use kmeans::{kmeans, ClusterAssignment, MAX_ITERATIONS, TOLERANCE};
pub use mix::{
    build_shared_pool, ceil_count, floor_count, inject_and_evict, MixOutcome, PoolEntry,
};
pub use pool::{ManifestRecord, SeedEntry, SeedPool, MANIFEST};

#[derive(Debug, Error)]
pub enum SeedingError {
    #[error("{0}")]
    Io(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("need at least {need} seed vectors, have {have}")]
    InsufficientSeeds { have: usize, need: usize },
    #[error("embedding: {0}")]
    Embedding(String),
    #[error("seeding config: {0}")]
    Config(String),
    #[error("initialization: {0}")]
    Init(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

impl SeedingError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        SeedingError::Io(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Every island starts from the task's initial program.
    #[default]
    Cold,
    /// Uniform random partition into equal-sized groups.
    Random,
    /// k-means over embeddings, no mixing.
    Kmeans,
    /// Random partition followed by copy-and-mix.
    RandomPerturbed,
    /// k-means followed by copy-and-mix with elite protection.
    KmeansElite,
}

impl AllocationMode {
    pub const ALL: [AllocationMode; 5] = [
        AllocationMode::Cold,
        AllocationMode::Random,
        AllocationMode::Kmeans,
        AllocationMode::RandomPerturbed,
        AllocationMode::KmeansElite,
    ];

    pub fn uses_kmeans(self) -> bool {
        matches!(self, AllocationMode::Kmeans | AllocationMode::KmeansElite)
    }

    pub fn mixes(self) -> bool {
        matches!(
            self,
            AllocationMode::RandomPerturbed | AllocationMode::KmeansElite
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AllocationMode::Cold => "cold",
            AllocationMode::Random => "random",
            AllocationMode::Kmeans => "kmeans",
            AllocationMode::RandomPerturbed => "random_perturbed",
            AllocationMode::KmeansElite => "kmeans_elite",
        }
    }
}

impl std::str::FromStr for AllocationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown allocation mode {s:?}"))
    }
}

fn default_ratio() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedingConfig {
    #[serde(default)]
    pub mode: AllocationMode,
    /// Pool directory; required by every mode except `cold`.
    #[serde(default)]
    pub pool: Option<PathBuf>,
    /// Mixing ratio.
    #[serde(default = "default_ratio")]
    pub d: f64,
    /// Elite-protection ratio.
    #[serde(default = "default_ratio")]
    pub rho: f64,
    /// Drop this top fraction of the pool before allocating.
    #[serde(default)]
    pub degrade_top_fraction: f64,
    #[serde(default)]
    pub embedder: EmbedderConfig,
}

impl Default for SeedingConfig {
    fn default() -> Self {
        Self {
            mode: AllocationMode::Cold,
            pool: None,
            d: default_ratio(),
            rho: default_ratio(),
            degrade_top_fraction: 0.0,
            embedder: EmbedderConfig::default(),
        }
    }
}

impl SeedingConfig {
    pub fn validate(&self) -> Result<(), SeedingError> {
        for (name, v) in [
            ("d", self.d),
            ("rho", self.rho),
            ("degrade_top_fraction", self.degrade_top_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SeedingError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.mode != AllocationMode::Cold && self.pool.is_none() {
            return Err(SeedingError::Config(format!(
                "mode {} requires a pool directory",
                self.mode.as_str()
            )));
        }
        Ok(())
    }
}

/// One island's share of the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandAllocation {
    pub island_id: usize,
    /// No seeds: the island starts from the task's initial program.
    pub cold: bool,
    /// Group before mixing (pool indices).
    pub original: Vec<usize>,
    /// Group after mixing; what gets evaluated and inserted.
    pub members: Vec<usize>,
    pub injected: Vec<usize>,
    pub evicted: Vec<usize>,
    pub protected: Vec<usize>,
    /// Files of `members`, for reports.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub mode: AllocationMode,
    pub islands: Vec<IslandAllocation>,
    pub pool_size: usize,
    pub d: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroids: Option<Vec<Vec<f64>>>,
}

impl Allocation {
    fn from_groups(
        mode: AllocationMode,
        groups: Vec<Vec<usize>>,
        m: usize,
        pool: &SeedPool,
        d: f64,
        rho: f64,
    ) -> Self {
        let islands = (0..m)
            .map(|i| {
                let original = groups.get(i).cloned().unwrap_or_default();
                IslandAllocation {
                    island_id: i,
                    cold: original.is_empty(),
                    files: original
                        .iter()
                        .map(|&e| pool.entries[e].file.clone())
                        .collect(),
                    members: original.clone(),
                    original,
                    injected: Vec::new(),
                    evicted: Vec::new(),
                    protected: Vec::new(),
                }
            })
            .collect();
        Self {
            mode,
            islands,
            pool_size: pool.len(),
            d,
            rho,
            centroids: None,
        }
    }
}

fn random_groups(n: usize, m: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::label::SEEDING, 1]));
    let mut groups = vec![Vec::new(); m];
    for (pos, idx) in order.into_iter().enumerate() {
        groups[pos % m].push(idx);
    }
    groups.iter_mut().for_each(|g| g.sort_unstable());
    groups
}

/// Splits `pool` across `m` islands according to `mode`.
///
/// A pool smaller than `m` fills only its first `len(pool)` islands; the rest
/// start cold. `embedder` is consulted only by the k-means modes.
pub fn allocate(
    pool: &SeedPool,
    m: usize,
    mode: AllocationMode,
    d: f64,
    rho: f64,
    embedder: &dyn EmbeddingProvider,
    seed: u64,
) -> Result<Allocation, SeedingError> {
    if m == 0 {
        return Err(SeedingError::Config("island count must be positive".into()));
    }
    let effective = m.min(pool.len());
    if mode == AllocationMode::Cold || effective == 0 {
        return Ok(Allocation::from_groups(mode, Vec::new(), m, pool, d, rho));
    }
    if effective < m {
        log::warn!(
            "seed pool has {} entries for {m} islands; {} island(s) start cold",
            pool.len(),
            m - effective
        );
    }
    let (groups, centroids) = if mode.uses_kmeans() {
        let vectors = embed_pool(pool, embedder)?;
        let a = kmeans(
            &vectors,
            effective,
            rng::derive_seed(seed, &[rng::label::SEEDING]),
        )?;
        (a.clusters, Some(a.centroids))
    } else {
        (random_groups(pool.len(), effective, seed), None)
    };
    let mut alloc = Allocation::from_groups(mode, groups.clone(), m, pool, d, rho);
    alloc.centroids = centroids;
    if mode.mixes() {
        let shared = build_shared_pool(&groups, pool, d);
        for (i, group) in groups.iter().enumerate() {
            let mut r = rng::stream(seed, &[rng::label::SEEDING, 2, i as u64]);
            let out = inject_and_evict(group, i, &shared, pool, d, rho, &mut r);
            let isl = &mut alloc.islands[i];
            isl.files = out
                .members
                .iter()
                .map(|&e| pool.entries[e].file.clone())
                .collect();
            isl.members = out.members;
            isl.injected = out.injected;
            isl.evicted = out.evicted;
            isl.protected = out.protected;
        }
    }
    Ok(alloc)
}

/// Outcome of one seed evaluation during initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvaluation {
    /// Pool index, absent for the task's initial program.
    pub pool_index: Option<usize>,
    pub program_id: ProgramId,
    pub valid: bool,
    pub score: Option<f64>,
    pub failure: Option<FailureKind>,
    pub inserted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandSeedReport {
    pub island_id: usize,
    pub evaluations: Vec<SeedEvaluation>,
    pub coverage: usize,
}

fn seed_one(
    island: &mut Island,
    id: ProgramId,
    body: &str,
    pool_index: Option<usize>,
    evaluator: &dyn Evaluator,
    ledger: &BudgetLedger,
) -> Result<SeedEvaluation, SeedingError> {
    let result = evaluation::evaluate(body, evaluator, ledger).map_err(|e| match e {
        EvalError::Unavailable(m) | EvalError::BudgetExhausted(m) => SeedingError::Init(m),
    })?;
    let mut out = SeedEvaluation {
        pool_index,
        program_id: id.clone(),
        valid: result.valid,
        score: result.score,
        failure: result.failure,
        inserted: false,
    };
    if let (Some(score), Some(features)) = (result.score, result.features) {
        let mut program =
            Program::new(id, body, island.id, Origin::Seed).with_evaluation(score, features);
        program.iteration_born = island.iteration;
        out.inserted = island.archive.insert(program)?.is_update();
    }
    Ok(out)
}

/// Evaluates every allocated seed on its island and inserts the feasible ones.
///
/// Seed scores are recomputed here; manifest scores are used only for
/// ranking during allocation. Evaluations are charged to `ledger`, whose caps
/// are not consulted (pass an uncapped ledger). An island left empty, because
/// it was cold or all its seeds failed, falls back to the task's initial
/// program, which must be feasible.
pub fn initialize_islands(
    islands: &mut [Island],
    allocation: &Allocation,
    pool: &SeedPool,
    evaluator: &dyn Evaluator,
    ledger: &BudgetLedger,
) -> Result<Vec<IslandSeedReport>, SeedingError> {
    if allocation.islands.len() != islands.len() {
        return Err(SeedingError::Config(format!(
            "allocation covers {} islands, run has {}",
            allocation.islands.len(),
            islands.len()
        )));
    }
    let mut reports = Vec::with_capacity(islands.len());
    for (island, alloc) in islands.iter_mut().zip(&allocation.islands) {
        let mut evaluations = Vec::new();
        for &idx in &alloc.members {
            let entry = &pool.entries[idx];
            let id = ProgramId::new(format!("seed-{}-{idx}", island.id));
            evaluations.push(seed_one(
                island,
                id,
                &entry.body,
                Some(idx),
                evaluator,
                ledger,
            )?);
        }
        if island.archive.is_empty() {
            let id = ProgramId::new(format!("init-{}", island.id));
            let eval = seed_one(
                island,
                id,
                &evaluator.initial_program(),
                None,
                evaluator,
                ledger,
            )?;
            if !eval.valid {
                return Err(SeedingError::Init(format!(
                    "initial program is infeasible ({:?}); island {} cannot start",
                    eval.failure, island.id
                )));
            }
            evaluations.push(eval);
        }
        reports.push(IslandSeedReport {
            island_id: island.id,
            coverage: island.archive.len(),
            evaluations,
        });
    }
    Ok(reports)
}
