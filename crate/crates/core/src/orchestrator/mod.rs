//! Run lifecycle: seeding, the island loop, budget enforcement, and outputs.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml                  effective configuration
//! events.jsonl                 header, seeding reports, events, K transitions
//! snapshots.jsonl              archive snapshots at evaluation milestones
//! trajectory.csv               best-so-far after seeding and after every event
//! checkpoints/final.jsonl      one record per occupied cell
//! transcripts/transcript.jsonl every generator call, replayable
//! summary.json
//! ```

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{
    self, ArchiveError, ArchiveGrid, Direction, Island, Origin, Program, ProgramId,
};
use crate::evaluation::{self, BudgetLedger, EvalError, Evaluator, FailureCounts};
use crate::generation::{
    generate_round, GenerationError, GeneratorBackend, TaskPrompt, TranscriptRecord,
};
use crate::rng;
use crate::scheduler::SchedulerState;
use crate::seeding::{
    self, AllocationMode, EmbeddingProvider, SeedPool, SeedingError, TrigramEmbedder,
};
use crate::telemetry::{
    CandidateRecord, GenerationEvent, IslandSnapshot, JsonlSink, KUpdateRecord, LogHeader,
    LogRecord, SeedingRecord, SnapshotRecord, TelemetryError, SCHEMA_VERSION,
};

pub use config::{ArchiveConfig, BackendConfig, BudgetConfig, PreDistance, RunConfig, TaskConfig};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TRANSCRIPT_DIR: &str = "transcripts";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Seeding(#[from] SeedingError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("evaluation: {0}")]
    Evaluation(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestProgram {
    pub program_id: ProgramId,
    pub island_id: usize,
    pub score: f64,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task: String,
    pub seeding_mode: AllocationMode,
    pub stop_reason: String,
    pub best: Option<BestProgram>,
    /// Best score right after seeding.
    pub initial_best: Option<f64>,
    pub n_eval: u64,
    pub seeding_evals: u64,
    pub successes: u64,
    pub failures: FailureCounts,
    pub api_cost: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
    pub events: u64,
    pub island_iterations: Vec<u64>,
    pub final_k: Vec<u32>,
    pub coverage: Vec<usize>,
    pub log_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

/// Everything a round needs besides its island.
struct RoundContext<'a> {
    evaluator: &'a dyn Evaluator,
    backend: &'a dyn GeneratorBackend,
    task: TaskPrompt,
    config: &'a RunConfig,
    embedder: Option<&'a dyn EmbeddingProvider>,
}

/// A finished round, not yet committed to the shared ledger or the logs.
struct RoundResult {
    island: Island,
    ledger: BudgetLedger,
    event: GenerationEvent,
    transition: Option<KUpdateRecord>,
    transcript: Vec<TranscriptRecord>,
}

fn now_secs() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn best_inspiration(inspirations: &[Program], direction: Direction) -> Option<&Program> {
    inspirations
        .iter()
        .fold(None, |best: Option<&Program>, p| match best {
            Some(b) if !direction.better(p.score.unwrap(), b.score.unwrap()) => Some(b),
            _ => Some(p),
        })
}

fn pre_distance(
    ctx: &RoundContext<'_>,
    archive: &ArchiveGrid,
    parent: &Program,
    inspirations: &[Program],
) -> Result<Option<f64>, RunError> {
    let Some(insp) = best_inspiration(inspirations, archive.direction()) else {
        return Ok(None);
    };
    match (ctx.config.pre_distance, ctx.embedder) {
        (PreDistance::Embedding, Some(e)) => {
            let v = e.embed(&[&parent.body, &insp.body])?;
            Ok(Some(seeding::euclidean(&v[0], &v[1])))
        }
        _ => Ok(Some(
            archive
                .cell_of(parent)?
                .l1_distance(&archive.cell_of(insp)?) as f64,
        )),
    }
}

/// One island iteration: generate, evaluate every candidate, insert the valid
/// ones, and feed the round's replacement flag to the scheduler.
fn execute_round(
    mut island: Island,
    ctx: &RoundContext<'_>,
    scratch: BudgetLedger,
) -> Result<RoundResult, RunError> {
    let k = island.scheduler.k;
    let round = generate_round(
        &mut island,
        k as usize,
        ctx.backend,
        &scratch,
        &ctx.task,
        &ctx.config.generation,
    )?;
    let direction = island.archive.direction();
    let parent_score = round.parent.score.expect("archived programs are evaluated");
    let parent_cell = island.archive.cell_of(&round.parent)?;
    let distance = pre_distance(ctx, &island.archive, &round.parent, &round.inspirations)?;

    let mut candidates = Vec::with_capacity(round.candidates.len());
    for cand in &round.candidates {
        let result =
            evaluation::evaluate(&cand.body, ctx.evaluator, &scratch).map_err(|e| match e {
                EvalError::BudgetExhausted(m) | EvalError::Unavailable(m) => {
                    RunError::Evaluation(m)
                }
            })?;
        let mut rec = CandidateRecord {
            rank: cand.rank,
            valid: result.valid,
            score: result.score,
            delta: None,
            cell_index: None,
            failure: result.failure,
            outcome: None,
            program_id: None,
            stated_probability: cand.stated_probability,
        };
        if let (Some(score), Some(features)) = (result.score, result.features) {
            let id = ProgramId::new(format!(
                "i{}-t{}-r{}",
                island.id, island.iteration, cand.rank
            ));
            let mut program =
                Program::new(id.clone(), cand.body.clone(), island.id, Origin::Generated)
                    .with_evaluation(score, features);
            program.parent_id = Some(round.parent.id.clone());
            program.iteration_born = island.iteration;
            rec.delta = Some(direction.orient(score) - direction.orient(parent_score));
            rec.cell_index = Some(island.archive.cell_of(&program)?);
            rec.outcome = Some(island.archive.insert(program)?);
            rec.program_id = Some(id);
        }
        candidates.push(rec);
    }
    let any_replacement = candidates
        .iter()
        .any(|c| c.outcome.is_some_and(|o| o.is_update()));
    let iteration = island.iteration;
    let transition = island
        .scheduler
        .record_iteration(any_replacement)
        .map(|t| KUpdateRecord {
            island_id: island.id,
            iteration,
            c: t.c,
            k_before: t.k_before,
            k_after: t.k_after,
        });
    island.iteration += 1;

    let event = GenerationEvent {
        island_id: island.id,
        iteration,
        k_used: k,
        parent_id: round.parent.id.clone(),
        parent_score,
        parent_cell,
        inspiration_ids: round.inspirations.iter().map(|p| p.id.clone()).collect(),
        inspiration_scores: round
            .inspirations
            .iter()
            .map(|p| p.score.unwrap())
            .collect(),
        candidates,
        pre_distance: distance,
        input_tokens: round.input_tokens(),
        output_tokens: round.output_tokens(),
        requery_count: round.requery_count(),
        backend_failure: round.backend_failure.clone(),
        any_replacement,
        n_eval: 0,
        timestamp: ctx.config.record_timestamps.then(now_secs),
    };
    Ok(RoundResult {
        island,
        ledger: scratch,
        event,
        transition,
        transcript: round.transcript,
    })
}

struct Outputs {
    events: JsonlSink,
    snapshots: JsonlSink,
    transcript: JsonlSink,
    trajectory: csv::Writer<fs::File>,
    trajectory_path: PathBuf,
    milestones: Vec<u64>,
    next_milestone: usize,
}

fn global_best(islands: &[Island], direction: Direction) -> Option<(usize, &Program)> {
    islands
        .iter()
        .filter_map(|i| i.archive.best().map(|p| (i.id, p)))
        .fold(None, |best, (id, p)| match best {
            Some((_, b)) if !direction.better(p.score.unwrap(), b.score.unwrap()) => best,
            _ => Some((id, p)),
        })
}

impl Outputs {
    fn snapshot(
        &self,
        islands: &[Island],
        n_eval: u64,
        milestone: Option<u64>,
        direction: Direction,
    ) -> Result<(), RunError> {
        let record = SnapshotRecord {
            n_eval_at_snapshot: n_eval,
            milestone,
            islands: islands
                .iter()
                .map(|i| {
                    let s = i.snapshot();
                    IslandSnapshot {
                        island_id: i.id,
                        coverage: s.coverage,
                        cell_quality: s.cell_quality,
                        best_score: s.best_score,
                    }
                })
                .collect(),
            global_best: global_best(islands, direction).map(|(_, p)| p.score.unwrap()),
        };
        Ok(self.snapshots.append(&record)?)
    }

    fn milestones_reached(
        &mut self,
        islands: &[Island],
        n_eval: u64,
        direction: Direction,
    ) -> Result<(), RunError> {
        while self.next_milestone < self.milestones.len()
            && self.milestones[self.next_milestone] <= n_eval
        {
            let m = self.milestones[self.next_milestone];
            self.snapshot(islands, n_eval, Some(m), direction)?;
            self.next_milestone += 1;
        }
        Ok(())
    }

    fn trajectory_row(
        &mut self,
        ledger: &BudgetLedger,
        event: Option<&GenerationEvent>,
        islands: &[Island],
        direction: Direction,
    ) -> Result<(), RunError> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let (island, iteration, k, island_best) = match event {
            Some(e) => (
                e.island_id.to_string(),
                e.iteration.to_string(),
                e.k_used.to_string(),
                opt(islands[e.island_id].snapshot().best_score),
            ),
            None => Default::default(),
        };
        let best = opt(global_best(islands, direction).map(|(_, p)| p.score.unwrap()));
        self.trajectory
            .write_record([
                ledger.n_eval().to_string(),
                ledger.api_cost().to_string(),
                island,
                iteration,
                k,
                island_best,
                best,
            ])
            .and_then(|_| self.trajectory.flush().map_err(Into::into))
            .map_err(|e| io_err(&self.trajectory_path, e))
    }
}

/// Runs a search into `out_dir` and returns its summary.
///
/// The budget is checked before every round; a round in flight always
/// completes, so the final evaluation count can exceed `max_evals` by at most
/// the largest candidate count minus one. Seeding evaluations are counted but
/// never stopped by the caps. On a fatal error a partial checkpoint is written
/// before the error is returned.
pub fn run(config: &RunConfig, out_dir: &Path, base_dir: &Path) -> Result<RunSummary, RunError> {
    config.validate()?;
    let started = Instant::now();
    for dir in [
        out_dir.to_path_buf(),
        out_dir.join(CHECKPOINT_DIR),
        out_dir.join(TRANSCRIPT_DIR),
    ] {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml()).map_err(|e| io_err(&config_path, e))?;

    let evaluator = config.task.build(base_dir)?;
    let backend = config.backend.build(config.seed, base_dir)?;
    let direction = evaluator.direction();
    let dims = match &config.archive.dims {
        Some(d) => d.clone(),
        None => evaluator.feature_dims(config.archive.bins),
    };
    if dims.len() != evaluator.feature_names().len() {
        return Err(RunError::Config(format!(
            "archive has {} dimensions, task declares {} features",
            dims.len(),
            evaluator.feature_names().len()
        )));
    }
    let mut islands = (0..config.islands)
        .map(|i| {
            Ok(Island::new(
                i,
                ArchiveGrid::new(dims.clone(), direction)?,
                SchedulerState::new(&config.scheduler),
                rng::stream(config.seed, &[rng::label::ISLAND, i as u64]),
            ))
        })
        .collect::<Result<Vec<_>, ArchiveError>>()?;
    let ledger = BudgetLedger::new(config.budget.prices(), config.budget.limits());

    let events_path = out_dir.join(EVENTS_FILE);
    let trajectory_path = out_dir.join(TRAJECTORY_FILE);
    let mut milestones = config.snapshot_milestones.clone();
    milestones.sort_unstable();
    milestones.dedup();
    let mut trajectory =
        csv::Writer::from_path(&trajectory_path).map_err(|e| io_err(&trajectory_path, e))?;
    trajectory
        .write_record([
            "n_eval",
            "api_cost",
            "island_id",
            "iteration",
            "k_used",
            "island_best",
            "global_best",
        ])
        .map_err(|e| io_err(&trajectory_path, e))?;
    let mut outputs = Outputs {
        events: JsonlSink::create(&events_path)?,
        snapshots: JsonlSink::create(&out_dir.join(SNAPSHOTS_FILE))?,
        transcript: JsonlSink::create(&out_dir.join(TRANSCRIPT_DIR).join(TRANSCRIPT_FILE))?,
        trajectory,
        trajectory_path,
        milestones,
        next_milestone: 0,
    };
    outputs.events.append(&LogRecord::Header(LogHeader {
        schema_version: SCHEMA_VERSION,
        run_id: config.run_id.clone(),
        seed: config.seed,
        direction,
        islands: config.islands,
        k_set: config.scheduler.k_set.clone(),
        task: config.task.name().to_string(),
    }))?;

    // Seeding.
    let pool = match (&config.seeding.pool, config.seeding.mode) {
        (Some(path), mode) if mode != AllocationMode::Cold => {
            let pool = SeedPool::load(&base_dir.join(path), direction)?;
            if config.seeding.degrade_top_fraction > 0.0 {
                pool.degrade(config.seeding.degrade_top_fraction)?
            } else {
                pool
            }
        }
        _ => SeedPool::new(Vec::new(), direction),
    };
    let embedder: Box<dyn EmbeddingProvider> =
        if config.seeding.mode.uses_kmeans() || config.pre_distance == PreDistance::Embedding {
            config.seeding.embedder.build(&pool)?
        } else {
            Box::new(TrigramEmbedder::default())
        };
    let allocation = seeding::allocate(
        &pool,
        config.islands,
        config.seeding.mode,
        config.seeding.d,
        config.seeding.rho,
        embedder.as_ref(),
        config.seed,
    )?;
    let seeding_ledger = ledger.scratch();
    let reports = seeding::initialize_islands(
        &mut islands,
        &allocation,
        &pool,
        evaluator.as_ref(),
        &seeding_ledger,
    )?;
    ledger.absorb(&seeding_ledger);
    for r in reports {
        outputs.events.append(&LogRecord::Seeding(SeedingRecord {
            island_id: r.island_id,
            evaluations: r.evaluations,
        }))?;
    }
    let seeding_evals = ledger.n_eval();
    let initial_best = global_best(&islands, direction).map(|(_, p)| p.score.unwrap());
    outputs.trajectory_row(&ledger, None, &islands, direction)?;
    outputs.milestones_reached(&islands, ledger.n_eval(), direction)?;

    let ctx = RoundContext {
        evaluator: evaluator.as_ref(),
        backend: backend.as_ref(),
        task: TaskPrompt {
            description: evaluator.description(),
            feature_names: evaluator.feature_names(),
        },
        config,
        embedder: (config.pre_distance == PreDistance::Embedding).then_some(embedder.as_ref()),
    };

    let outcome = evolve(&mut islands, &ctx, &ledger, &mut outputs, direction);
    let stop_reason = match outcome {
        Ok(reason) => reason,
        Err(e) => {
            let path = out_dir.join(CHECKPOINT_DIR).join("partial.jsonl");
            if let Ok(f) = fs::File::create(&path) {
                let _ = archive::write_checkpoint(f, islands.iter().map(|i| (i.id, &i.archive)));
            }
            return Err(e);
        }
    };

    outputs.snapshot(&islands, ledger.n_eval(), None, direction)?;
    let ckpt = out_dir.join(CHECKPOINT_DIR).join("final.jsonl");
    let f = fs::File::create(&ckpt).map_err(|e| io_err(&ckpt, e))?;
    archive::write_checkpoint(f, islands.iter().map(|i| (i.id, &i.archive)))?;

    let totals = ledger.totals();
    let summary = RunSummary {
        run_id: config.run_id.clone(),
        task: config.task.name().to_string(),
        seeding_mode: config.seeding.mode,
        stop_reason,
        best: global_best(&islands, direction).map(|(island_id, p)| BestProgram {
            program_id: p.id.clone(),
            island_id,
            score: p.score.unwrap(),
            body: p.body.clone(),
        }),
        initial_best,
        n_eval: totals.n_eval,
        seeding_evals,
        successes: totals.successes,
        failures: totals.failures,
        api_cost: totals.api_cost,
        input_tokens: totals.input_tokens,
        output_tokens: totals.output_tokens,
        calls: totals.calls,
        events: islands.iter().map(|i| i.iteration).sum(),
        island_iterations: islands.iter().map(|i| i.iteration).collect(),
        final_k: islands.iter().map(|i| i.scheduler.k).collect(),
        coverage: islands.iter().map(|i| i.archive.len()).collect(),
        log_path: PathBuf::from(EVENTS_FILE),
        wall_time_secs: config
            .record_timestamps
            .then(|| started.elapsed().as_secs_f64()),
    };
    let summary_path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, text + "\n").map_err(|e| io_err(&summary_path, e))?;
    Ok(summary)
}

/// Records a finished round: charges its ledger and writes its logs.
fn commit(
    result: RoundResult,
    islands: &mut [Island],
    ledger: &BudgetLedger,
    outputs: &mut Outputs,
    direction: Direction,
) -> Result<(), RunError> {
    ledger.absorb(&result.ledger);
    let mut event = result.event;
    event.n_eval = ledger.n_eval();
    let id = result.island.id;
    islands[id] = result.island;
    for t in &result.transcript {
        outputs.transcript.append(t)?;
    }
    outputs.events.append(&LogRecord::Event(event.clone()))?;
    if let Some(t) = result.transition {
        outputs.events.append(&LogRecord::KUpdate(t))?;
    }
    outputs.trajectory_row(ledger, Some(&event), islands, direction)?;
    outputs.milestones_reached(islands, ledger.n_eval(), direction)
}

/// Ring migration: each island's best is queued for its successor.
fn collect_migrants(islands: &[Island], cycle: u64) -> Vec<Program> {
    let m = islands.len();
    let mut out = Vec::new();
    for src in islands {
        if let Some(best) = src.archive.best() {
            let dest = (src.id + 1) % m;
            if dest == src.id {
                continue;
            }
            let mut p = best.clone();
            p.id = ProgramId::new(format!("mig-c{cycle}-{}-{}", src.id, dest));
            p.parent_id = Some(best.id.clone());
            p.island_id = dest;
            p.origin = Origin::Reinjected;
            out.push(p);
        }
    }
    out
}

fn evolve(
    islands: &mut [Island],
    ctx: &RoundContext<'_>,
    ledger: &BudgetLedger,
    outputs: &mut Outputs,
    direction: Direction,
) -> Result<String, RunError> {
    let mut pending: Vec<Program> = Vec::new();
    let mut idle = 0;
    let mut cycle = 0u64;
    loop {
        if let Some(reason) = ledger.exhaustion() {
            return Ok(reason);
        }
        for mut p in pending.drain(..) {
            let dest = p.island_id;
            p.iteration_born = islands[dest].iteration;
            islands[dest].archive.insert(p)?;
        }
        let before = ledger.n_eval();
        if ctx.config.concurrent {
            let results: Vec<Result<RoundResult, RunError>> = islands
                .par_iter()
                .map(|isl| execute_round(isl.clone(), ctx, ledger.scratch()))
                .collect();
            for r in results {
                if ledger.is_exhausted() {
                    break;
                }
                commit(r?, islands, ledger, outputs, direction)?;
            }
        } else {
            for i in 0..islands.len() {
                if ledger.is_exhausted() {
                    break;
                }
                let r = execute_round(islands[i].clone(), ctx, ledger.scratch())?;
                commit(r, islands, ledger, outputs, direction)?;
            }
        }
        cycle += 1;
        let interval = ctx.config.migration_interval;
        if interval > 0 && cycle.is_multiple_of(interval) {
            pending = collect_migrants(islands, cycle);
        }
        if ledger.n_eval() == before {
            idle += 1;
            if idle >= ctx.config.max_idle_cycles {
                log::warn!("no evaluations for {idle} consecutive cycles; stopping");
                return Ok(format!("idle for {idle} cycles"));
            }
        } else {
            idle = 0;
        }
    }
}

/// Re-executes a finished run from its recorded transcript into `out_dir`.
/// Relative paths in the saved configuration resolve against `base_dir`.
pub fn replay(run_dir: &Path, out_dir: &Path, base_dir: &Path) -> Result<RunSummary, RunError> {
    let mut config = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let transcript = run_dir.join(TRANSCRIPT_DIR).join(TRANSCRIPT_FILE);
    config.backend = BackendConfig::Scripted {
        path: fs::canonicalize(&transcript).map_err(|e| io_err(&transcript, e))?,
        lenient: false,
    };
    run(&config, out_dir, base_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::read_log;

    fn sphere_config(max_evals: u64) -> RunConfig {
        let mut c = RunConfig::from_toml(
            r#"
            seed = 11
            islands = 3
            [task]
            kind = "synthetic_sphere"
            dim = 4
            [backend]
            kind = "mock"
            sigma = 0.05
            "#,
        )
        .unwrap();
        c.budget.max_evals = Some(max_evals);
        c
    }

    fn run_in(cfg: &RunConfig, dir: &Path) -> RunSummary {
        run(cfg, dir, dir).unwrap()
    }

    fn read(dir: &Path, file: &str) -> String {
        fs::read_to_string(dir.join(file)).unwrap()
    }

    #[test]
    fn writes_every_output() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_in(&sphere_config(60), dir.path());
        for f in [
            CONFIG_FILE,
            EVENTS_FILE,
            SNAPSHOTS_FILE,
            TRAJECTORY_FILE,
            SUMMARY_FILE,
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert!(dir
            .path()
            .join(CHECKPOINT_DIR)
            .join("final.jsonl")
            .is_file());
        assert!(dir
            .path()
            .join(TRANSCRIPT_DIR)
            .join(TRANSCRIPT_FILE)
            .is_file());
        assert!(s.stop_reason.contains("max_evals"), "{}", s.stop_reason);
        assert_eq!(s.seeding_evals, 3);
        let log = read_log(&dir.path().join(EVENTS_FILE)).unwrap();
        assert_eq!(log.events.len() as u64, s.events);
        assert_eq!(log.seeding.len(), 3);
        let on_disk: RunSummary = serde_json::from_str(&read(dir.path(), SUMMARY_FILE)).unwrap();
        assert_eq!(on_disk, s);
    }

    #[test]
    fn budget_is_checked_between_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_in(&sphere_config(40), dir.path());
        let kmax = *RunConfig::default().scheduler.k_set.iter().max().unwrap() as u64;
        assert!(s.n_eval >= 40 && s.n_eval < 40 + kmax, "{}", s.n_eval);
        let log = read_log(&dir.path().join(EVENTS_FILE)).unwrap();
        let last = log.events.last().unwrap();
        assert_eq!(last.n_eval, s.n_eval);
        // Every event but the last started under the cap.
        let before_last = log.events[log.events.len() - 2].n_eval;
        assert!(before_last < 40);
    }

    #[test]
    fn zero_budget_seeds_then_stops() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_in(&sphere_config(0), dir.path());
        assert_eq!(s.events, 0);
        assert_eq!(s.n_eval, 3);
        assert!(s.best.is_some());
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = sphere_config(80);
        run_in(&cfg, a.path());
        run_in(&cfg, b.path());
        for f in [EVENTS_FILE, SNAPSHOTS_FILE, TRAJECTORY_FILE, SUMMARY_FILE] {
            assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
        }
    }

    #[test]
    fn concurrent_matches_round_robin() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut cfg = sphere_config(90);
        cfg.migration_interval = 2;
        run_in(&cfg, a.path());
        cfg.concurrent = true;
        run_in(&cfg, b.path());
        assert_eq!(read(a.path(), EVENTS_FILE), read(b.path(), EVENTS_FILE));
        assert_eq!(
            read(a.path(), TRAJECTORY_FILE),
            read(b.path(), TRAJECTORY_FILE)
        );
    }

    #[test]
    fn replay_reproduces_the_run() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let s = run_in(&sphere_config(70), a.path());
        let r = replay(a.path(), b.path(), a.path()).unwrap();
        assert_eq!(read(a.path(), EVENTS_FILE), read(b.path(), EVENTS_FILE));
        assert_eq!(s.best, r.best);
        assert_eq!(s.n_eval, r.n_eval);
    }

    #[test]
    fn migration_copies_best_to_next_island() {
        let mut islands: Vec<Island> = (0..2)
            .map(|i| {
                Island::new(
                    i,
                    ArchiveGrid::new(
                        crate::evaluation::SyntheticSphere { dim: 2 }.feature_dims(4),
                        Direction::Maximize,
                    )
                    .unwrap(),
                    SchedulerState::new(&Default::default()),
                    rng::stream(0, &[i as u64]),
                )
            })
            .collect();
        let p = Program::new(ProgramId::new("a"), "[0.1,0.1]", 0, Origin::Generated)
            .with_evaluation(-0.02, vec![0.1, 0.0]);
        islands[0].archive.insert(p).unwrap();
        let m = collect_migrants(&islands, 3);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].island_id, 1);
        assert_eq!(m[0].origin, Origin::Reinjected);
        assert_eq!(m[0].parent_id, Some(ProgramId::new("a")));
        islands.truncate(1);
        assert!(collect_migrants(&islands, 1).is_empty());
    }
}
