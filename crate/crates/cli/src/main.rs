use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use archipelago::archive::Direction;
use archipelago::orchestrator::{
    self, BackendConfig, RunConfig, TaskConfig, EVENTS_FILE, SNAPSHOTS_FILE,
};
use archipelago::seeding::{self, AllocationMode, EmbedderConfig, SeedPool};
use archipelago::telemetry::{self, read_jsonl, RunLog, SnapshotRecord};

#[derive(Parser)]
#[command(
    name = "archipelago",
    version,
    about = "Multi-island MAP-Elites program search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search described by a TOML configuration.
    Run(RunArgs),
    /// Embed, cluster and mix a seed pool; write the island assignment.
    SeedInit(SeedInitArgs),
    /// Copy a seed pool without its top-scoring fraction.
    DegradePool(DegradeArgs),
    /// Offline analyses over one or more event logs.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Re-execute a finished run from its recorded transcript.
    Replay {
        run_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flatten a run's archive snapshots into CSV.
    SnapshotDump {
        run_dir: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config, then `runs/<run_id>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_evals: Option<u64>,
    #[arg(long)]
    max_cost: Option<f64>,
    /// Timeout for external evaluator runs and remote generator requests.
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    concurrent: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Maximize,
    Minimize,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Maximize => Direction::Maximize,
            DirectionArg::Minimize => Direction::Minimize,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderArg {
    Trigram,
    Precomputed,
}

#[derive(Args)]
struct SeedInitArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    islands: usize,
    #[arg(long, default_value = "kmeans_elite")]
    mode: AllocationMode,
    #[arg(long, default_value_t = 0.2)]
    d: f64,
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "maximize")]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value = "trigram")]
    embedder: EmbedderArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long, value_enum, default_value = "maximize")]
    direction: DirectionArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LogArgs {
    /// Event logs, or run directories holding one.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Analysis {
    /// Coverage and best improvement of the top-m prefix of K-candidate rounds.
    Topm {
        #[command(flatten)]
        logs: LogArgs,
        #[arg(long, default_value_t = 7)]
        k: u32,
    },
    /// Validity, improvement and cell distance by stated-probability rank.
    Ranks {
        #[command(flatten)]
        logs: LogArgs,
        #[arg(long, default_value_t = 7)]
        k: u32,
    },
    /// Improvement probability by pre-generation distance decile and K.
    DistanceGrid {
        #[command(flatten)]
        logs: LogArgs,
        /// Candidate counts to tabulate; defaults to the first log's K set.
        #[arg(long, value_delimiter = ',')]
        k_set: Option<Vec<u32>>,
    },
}

fn parent_dir(path: &Path) -> Result<PathBuf> {
    let abs = fs::canonicalize(path).with_context(|| format!("{}", path.display()))?;
    Ok(abs.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    let base = parent_dir(&args.config)?;
    config.resolve_paths(&base);
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.max_evals {
        config.budget.max_evals = Some(n);
    }
    if let Some(c) = args.max_cost {
        config.budget.max_cost = Some(c);
    }
    if let Some(t) = args.timeout_secs {
        if !(t > 0.0) {
            bail!("--timeout-secs must be positive");
        }
        if let TaskConfig::External { timeout_secs, .. } = &mut config.task {
            *timeout_secs = t;
        }
        if let BackendConfig::Remote(r) = &mut config.backend {
            r.timeout_secs = t.ceil() as u64;
        }
    }
    config.concurrent |= args.concurrent;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.run_id));
    let summary = orchestrator::run(&config, &out, &base)?;
    let best = summary
        .best
        .as_ref()
        .map(|b| b.score.to_string())
        .unwrap_or_else(|| "none".into());
    println!(
        "best {best}  n_eval {}  api_cost {:.6}  stop: {}  -> {}",
        summary.n_eval,
        summary.api_cost,
        summary.stop_reason,
        out.display()
    );
    Ok(())
}

fn cmd_seed_init(args: SeedInitArgs) -> Result<()> {
    let pool = SeedPool::load(&args.pool, args.direction.into())?;
    let embedder = match args.embedder {
        EmbedderArg::Trigram => EmbedderConfig::Trigram,
        EmbedderArg::Precomputed => EmbedderConfig::Precomputed,
    }
    .build(&pool)?;
    let alloc = seeding::allocate(
        &pool,
        args.islands,
        args.mode,
        args.d,
        args.rho,
        embedder.as_ref(),
        args.seed,
    )?;
    fs::create_dir_all(&args.out).with_context(|| format!("{}", args.out.display()))?;
    let path = args.out.join("assignment.json");
    fs::write(&path, serde_json::to_string_pretty(&alloc)? + "\n")
        .with_context(|| format!("{}", path.display()))?;
    for isl in &alloc.islands {
        println!(
            "island {}: {} members ({} original, {} injected, {} evicted, {} protected){}",
            isl.island_id,
            isl.members.len(),
            isl.original.len(),
            isl.injected.len(),
            isl.evicted.len(),
            isl.protected.len(),
            if isl.cold { " cold" } else { "" }
        );
    }
    Ok(())
}

fn cmd_degrade(args: DegradeArgs) -> Result<()> {
    let pool = SeedPool::load(&args.pool, args.direction.into())?;
    let kept = pool.degrade(args.fraction)?;
    kept.write(&args.out)?;
    println!(
        "kept {} of {} entries -> {}",
        kept.len(),
        pool.len(),
        args.out.display()
    );
    Ok(())
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<RunLog>> {
    paths
        .iter()
        .map(|p| {
            let file = if p.is_dir() {
                p.join(EVENTS_FILE)
            } else {
                p.clone()
            };
            Ok(telemetry::read_log(&file)?)
        })
        .collect()
}

fn write_table(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("{}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_analyze(analysis: Analysis) -> Result<()> {
    match analysis {
        Analysis::Topm { logs, k } => {
            let runs = load_logs(&logs.logs)?;
            let rows = telemetry::topm_replay(&runs, k)?;
            write_table(&logs.out, "topm.csv", &telemetry::topm_table(&rows))
        }
        Analysis::Ranks { logs, k } => {
            let runs = load_logs(&logs.logs)?;
            let profile = telemetry::rank_profile(&runs, k);
            if profile.scatter.is_empty() && profile.ranks.iter().all(|r| r.n_candidates == 0) {
                bail!("no events with k = {k} in the given logs");
            }
            write_table(
                &logs.out,
                "ranks.csv",
                &telemetry::rank_table(&profile.ranks),
            )?;
            write_table(
                &logs.out,
                "rank_groups.csv",
                &telemetry::rank_table(&profile.groups),
            )?;
            write_table(
                &logs.out,
                "rank_scatter.csv",
                &telemetry::scatter_table(&profile.scatter),
            )
        }
        Analysis::DistanceGrid { logs, k_set } => {
            let runs = load_logs(&logs.logs)?;
            let k_set = k_set.unwrap_or_else(|| runs[0].header.k_set.clone());
            let (rows, warnings) = telemetry::distance_k_grid(&runs, &k_set);
            for w in warnings {
                eprintln!("warning: {w}");
            }
            write_table(
                &logs.out,
                "distance_grid.csv",
                &telemetry::grid_table(&rows),
            )
        }
    }
}

fn cmd_snapshot_dump(run_dir: &Path, out: Option<&Path>) -> Result<()> {
    let snapshots: Vec<SnapshotRecord> = read_jsonl(&run_dir.join(SNAPSHOTS_FILE))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n_eval",
        "milestone",
        "island_id",
        "coverage",
        "cell_quality",
        "best_score",
        "global_best",
    ])?;
    for s in &snapshots {
        for isl in &s.islands {
            w.write_record([
                s.n_eval_at_snapshot.to_string(),
                s.milestone
                    .map(|m| m.to_string())
                    .unwrap_or_else(|| "final".into()),
                isl.island_id.to_string(),
                isl.coverage.to_string(),
                opt(isl.cell_quality),
                opt(isl.best_score),
                opt(s.global_best),
            ])?;
        }
    }
    let text = String::from_utf8(w.into_inner()?)?;
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("{}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::SeedInit(a) => cmd_seed_init(a),
        Command::DegradePool(a) => cmd_degrade(a),
        Command::Analyze { analysis } => cmd_analyze(analysis),
        Command::Replay { run_dir, out } => {
            let base = std::env::current_dir()?;
            let s = orchestrator::replay(&run_dir, &out, &base)?;
            println!(
                "replayed {} events, n_eval {} -> {}",
                s.events,
                s.n_eval,
                out.display()
            );
            Ok(())
        }
        Command::SnapshotDump { run_dir, out } => cmd_snapshot_dump(&run_dir, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
