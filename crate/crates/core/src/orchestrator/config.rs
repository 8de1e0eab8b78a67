//! Run configuration, loaded from TOML.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::archive::{Dim, Direction};
use crate::evaluation::{
    BudgetLimits, CirclePacking, Evaluator, ExternalEvaluator, Prices, SyntheticSphere,
};
use crate::generation::GeneratorBackend;
use crate::generation::{
    GenerationConfig, MockBackend, RemoteBackend, RemoteConfig, ScriptedBackend,
};
use crate::scheduler::SchedulerConfig;
use crate::seeding::{EmbedderConfig, SeedingConfig};

fn default_n() -> usize {
    26
}

fn default_dim() -> usize {
    8
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_sigma() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    CirclePacking {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default)]
        mean_bounds: Option<(f64, f64)>,
        #[serde(default)]
        std_bounds: Option<(f64, f64)>,
    },
    SyntheticSphere {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    External {
        command: PathBuf,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
        #[serde(default)]
        direction: Direction,
        feature_names: Vec<String>,
        feature_bounds: Vec<(f64, f64)>,
        /// File holding the program used to cold-start islands.
        initial_program: PathBuf,
        #[serde(default)]
        description: String,
        #[serde(default)]
        file_name: Option<String>,
    },
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::CirclePacking {
            n: default_n(),
            mean_bounds: None,
            std_bounds: None,
        }
    }
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::CirclePacking { .. } => "circle_packing",
            TaskConfig::SyntheticSphere { .. } => "synthetic_sphere",
            TaskConfig::External { .. } => "external",
        }
    }

    /// Builds the evaluator. Relative paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Box<dyn Evaluator>, RunError> {
        Ok(match self {
            TaskConfig::CirclePacking {
                n,
                mean_bounds,
                std_bounds,
            } => {
                let mut t = CirclePacking::new(*n);
                if let Some(b) = mean_bounds {
                    t.mean_bounds = *b;
                }
                if let Some(b) = std_bounds {
                    t.std_bounds = *b;
                }
                Box::new(t)
            }
            TaskConfig::SyntheticSphere { dim } => Box::new(SyntheticSphere { dim: *dim }),
            TaskConfig::External {
                command,
                args,
                timeout_secs,
                direction,
                feature_names,
                feature_bounds,
                initial_program,
                description,
                file_name,
            } => {
                let path = base.join(initial_program);
                let initial = std::fs::read_to_string(&path)
                    .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
                let command = if command.components().count() > 1 {
                    base.join(command)
                } else {
                    command.clone()
                };
                let e = ExternalEvaluator {
                    args: args.clone(),
                    timeout: Duration::from_secs_f64(*timeout_secs),
                    direction: *direction,
                    feature_names: feature_names.clone(),
                    feature_bounds: feature_bounds.clone(),
                    initial_program: initial,
                    description: description.clone(),
                    file_name: file_name.clone().unwrap_or_else(|| "candidate.txt".into()),
                    ..ExternalEvaluator::new(command)
                };
                e.check_available()
                    .map_err(|e| RunError::Config(e.to_string()))?;
                Box::new(e)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Mock {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Scripted {
        path: PathBuf,
        /// Skip the prompt-hash check.
        #[serde(default)]
        lenient: bool,
    },
    Remote(RemoteConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock {
            sigma: default_sigma(),
        }
    }
}

impl BackendConfig {
    pub fn build(&self, seed: u64, base: &Path) -> Result<Box<dyn GeneratorBackend>, RunError> {
        Ok(match self {
            BackendConfig::Mock { sigma } => Box::new(MockBackend {
                seed,
                sigma: *sigma,
            }),
            BackendConfig::Scripted { path, lenient } => {
                let b = ScriptedBackend::load(&base.join(path))
                    .map_err(|e| RunError::Config(e.to_string()))?;
                Box::new(if *lenient { b.lenient() } else { b })
            }
            BackendConfig::Remote(cfg) => Box::new(
                RemoteBackend::new(cfg.clone()).map_err(|e| RunError::Config(e.to_string()))?,
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreDistance {
    /// L1 distance between archive cells.
    #[default]
    Cell,
    /// Euclidean distance between embeddings from the seeding embedder.
    Embedding,
}

fn default_max_evals() -> Option<u64> {
    Some(800)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default = "default_max_evals")]
    pub max_evals: Option<u64>,
    #[serde(default)]
    pub max_cost: Option<f64>,
    /// Price per million input tokens.
    #[serde(default)]
    pub input_per_million: f64,
    #[serde(default)]
    pub output_per_million: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            max_evals: default_max_evals(),
            max_cost: None,
            input_per_million: 0.0,
            output_per_million: 0.0,
        }
    }
}

impl BudgetConfig {
    pub fn prices(&self) -> Prices {
        Prices {
            input_per_million: self.input_per_million,
            output_per_million: self.output_per_million,
        }
    }

    pub fn limits(&self) -> BudgetLimits {
        BudgetLimits {
            max_evals: self.max_evals,
            max_cost: self.max_cost,
        }
    }
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveConfig {
    /// Bins per feature dimension when `dims` is not given.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Explicit geometry, overriding the task's feature bounds.
    #[serde(default)]
    pub dims: Option<Vec<Dim>>,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        Self {
            bins: default_bins(),
            dims: None,
        }
    }
}

fn default_islands() -> usize {
    4
}

fn default_run_id() -> String {
    "run".into()
}

fn default_milestones() -> Vec<u64> {
    vec![100, 200, 400, 800]
}

fn default_max_idle_cycles() -> u32 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Label written into the log header; keeps logs comparable across output directories.
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "default_islands")]
    pub islands: usize,
    /// Run island rounds in parallel. Results are identical to round-robin.
    #[serde(default)]
    pub concurrent: bool,
    /// Ring migration of each island's best every this many cycles; 0 disables.
    #[serde(default)]
    pub migration_interval: u64,
    /// Stop after this many consecutive cycles without a single evaluation.
    #[serde(default = "default_max_idle_cycles")]
    pub max_idle_cycles: u32,
    #[serde(default)]
    pub record_timestamps: bool,
    #[serde(default)]
    pub pre_distance: PreDistance,
    /// Evaluation counts at which archive snapshots are written.
    #[serde(default = "default_milestones")]
    pub snapshot_milestones: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub archive: ArchiveConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub seeding: SeedingConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Rewrites relative file paths as paths under `base`, so the saved copy
    /// of the configuration no longer depends on the working directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.task {
            TaskConfig::External {
                command,
                initial_program,
                ..
            } => {
                if command.components().count() > 1 {
                    fix(command);
                }
                fix(initial_program);
            }
            TaskConfig::CirclePacking { .. } | TaskConfig::SyntheticSphere { .. } => {}
        }
        if let BackendConfig::Scripted { path, .. } = &mut self.backend {
            fix(path);
        }
        if let Some(p) = &mut self.seeding.pool {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let err = |m: String| Err(RunError::Config(m));
        if self.islands == 0 {
            return err("islands must be at least 1".into());
        }
        if self.budget.max_evals.is_none() && self.budget.max_cost.is_none() {
            return err("at least one of budget.max_evals and budget.max_cost must be set".into());
        }
        if let Some(c) = self.budget.max_cost {
            if !(c > 0.0) {
                return err(format!("budget.max_cost must be positive, got {c}"));
            }
        }
        if self.budget.input_per_million < 0.0 || self.budget.output_per_million < 0.0 {
            return err("token prices must be non-negative".into());
        }
        if self.archive.bins == 0 {
            return err("archive.bins must be positive".into());
        }
        if let BackendConfig::Mock { sigma } = self.backend {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return err(format!(
                    "backend.sigma must be a non-negative number, got {sigma}"
                ));
            }
        }
        if self.pre_distance == PreDistance::Embedding
            && self.seeding.embedder == EmbedderConfig::Precomputed
        {
            return err("pre_distance = \"embedding\" cannot use precomputed embeddings of generated programs".into());
        }
        self.scheduler
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.seeding
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::AllocationMode;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.islands, 4);
        assert_eq!(c.budget.max_evals, Some(800));
        assert_eq!(c.scheduler, SchedulerConfig::default());
        assert_eq!(c.generation.n_inspirations, 3);
        assert_eq!(
            c.task,
            TaskConfig::CirclePacking {
                n: 26,
                mean_bounds: None,
                std_bounds: None
            }
        );
        assert_eq!(c.backend, BackendConfig::Mock { sigma: 0.02 });
        assert!(c.validate().is_ok());
    }

    #[test]
    fn round_trip() {
        let text = r#"
            seed = 7
            islands = 2
            [task]
            kind = "synthetic_sphere"
            dim = 4
            [backend]
            kind = "remote"
            endpoint = "http://localhost:1/v1/chat/completions"
            model = "m"
            [seeding]
            mode = "kmeans_elite"
            pool = "pool"
            d = 0.3
            [seeding.embedder]
            kind = "trigram"
            [budget]
            max_evals = 50
            input_per_million = 1.25
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.seeding.mode, AllocationMode::KmeansElite);
        assert_eq!(c.budget.prices().input_per_million, 1.25);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            "islands = 0",
            "unknown = 1",
            "[budget]\nmax_cost = -1.0",
            "[scheduler]\nk_init = 4",
            "[seeding]\nmode = \"kmeans\"",
            "[backend]\nkind = \"mock\"\nsigma = -0.1",
        ] {
            assert!(RunConfig::from_toml(bad).is_err(), "{bad}");
        }
    }
}
