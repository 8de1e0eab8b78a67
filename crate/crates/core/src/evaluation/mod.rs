//! Candidate evaluation and budget accounting.

mod circle;
mod external;
mod ledger;
mod sphere;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Dim, Direction};

pub use circle::{circles_to_genome, parse_circles, Circle, CirclePacking, CIRCLE_EPS};
pub use external::ExternalEvaluator;
pub use ledger::{cost_of, BudgetLedger, BudgetLimits, FailureCounts, LedgerTotals, Prices};
pub use sphere::SyntheticSphere;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureKind {
    #[serde(alias = "parse_error")]
    ParseError,
    #[serde(alias = "runtime_error")]
    RuntimeError,
    #[serde(alias = "timeout")]
    Timeout,
    #[serde(alias = "constraint_violation")]
    ConstraintViolation,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] = [
        FailureKind::ParseError,
        FailureKind::RuntimeError,
        FailureKind::Timeout,
        FailureKind::ConstraintViolation,
    ];

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub valid: bool,
    pub score: Option<f64>,
    pub features: Option<Vec<f64>>,
    pub failure: Option<FailureKind>,
    /// Seconds spent inside the evaluator.
    pub wall_time: f64,
    /// Human-readable reason for a failure, including raw evaluator output where relevant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl EvaluationResult {
    pub fn success(score: f64, features: Vec<f64>) -> Self {
        Self {
            valid: true,
            score: Some(score),
            features: Some(features),
            failure: None,
            wall_time: 0.0,
            diagnostic: None,
        }
    }

    pub fn failure(kind: FailureKind, diagnostic: impl Into<String>) -> Self {
        Self {
            valid: false,
            score: None,
            features: None,
            failure: Some(kind),
            wall_time: 0.0,
            diagnostic: Some(diagnostic.into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation budget exhausted ({0})")]
    BudgetExhausted(String),
    #[error("evaluator unavailable: {0}")]
    Unavailable(String),
}

/// A task-specific scorer. Implementations must be pure over `body` apart from
/// wall-clock effects.
pub trait Evaluator: Send + Sync {
    fn name(&self) -> &str;
    fn direction(&self) -> Direction;
    fn feature_names(&self) -> Vec<String>;
    /// Default archive geometry for this task's features.
    fn feature_dims(&self, bins: usize) -> Vec<Dim>;
    /// Program used to cold-start an island that received no seeds.
    fn initial_program(&self) -> String;
    /// Short description inserted at the top of generation prompts.
    fn description(&self) -> String;
    fn evaluate(&self, body: &str) -> EvaluationResult;
}

/// Runs one candidate through the evaluation pipeline.
///
/// `n_eval` is charged before the evaluator runs, so failures of every kind
/// are counted. Refuses to start when the ledger's caps are already reached.
pub fn evaluate(
    body: &str,
    evaluator: &dyn Evaluator,
    ledger: &BudgetLedger,
) -> Result<EvaluationResult, EvalError> {
    if let Some(reason) = ledger.exhaustion() {
        return Err(EvalError::BudgetExhausted(reason));
    }
    ledger.record_entry();
    let start = Instant::now();
    let mut result = evaluator.evaluate(body);
    result.wall_time = start.elapsed().as_secs_f64();
    ledger.record_outcome(&result);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_counts_failures_and_respects_caps() {
        let task = CirclePacking::new(1);
        let ledger = BudgetLedger::new(
            Prices::default(),
            BudgetLimits {
                max_evals: Some(2),
                max_cost: None,
            },
        );
        let ok = evaluate(r#"[{"x":0.5,"y":0.5,"r":0.5}]"#, &task, &ledger).unwrap();
        assert!(ok.valid);
        assert_eq!(ok.score, Some(0.5));
        let bad = evaluate(r#"[{"x":0.9,"y":0.5,"r":0.5}]"#, &task, &ledger).unwrap();
        assert_eq!(bad.failure, Some(FailureKind::ConstraintViolation));
        assert_eq!(ledger.n_eval(), 2);
        assert!(matches!(
            evaluate("[]", &task, &ledger),
            Err(EvalError::BudgetExhausted(_))
        ));
        assert_eq!(ledger.n_eval(), 2);
        let totals = ledger.totals();
        assert_eq!(totals.successes, 1);
        assert_eq!(totals.failures.constraint_violation, 1);
    }

    #[test]
    fn failure_kind_wire_names() {
        assert_eq!(
            serde_json::to_string(&FailureKind::ConstraintViolation).unwrap(),
            "\"ConstraintViolation\""
        );
        let k: FailureKind = serde_json::from_str("\"timeout\"").unwrap();
        assert_eq!(k, FailureKind::Timeout);
    }
}
