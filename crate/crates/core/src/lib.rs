//! Multi-island MAP-Elites program search driven by a multi-candidate
//! generator, with per-island adaptive candidate counts, clustered warm-start
//! from seed pools, budget accounting, and offline replay analyses over the
//! search event log.

pub mod archive;
pub mod evaluation;
pub mod generation;
pub mod orchestrator;
pub mod rng;
pub mod scheduler;
pub mod seeding;
pub mod telemetry;
