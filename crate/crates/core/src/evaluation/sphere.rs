//! Deterministic testbed: maximize `-sum(x_i^2)` over an 8-dimensional vector.

use super::{EvaluationResult, Evaluator, FailureKind};
use crate::archive::{Dim, Direction};

#[derive(Debug, Clone)]
pub struct SyntheticSphere {
    pub dim: usize,
}

impl Default for SyntheticSphere {
    fn default() -> Self {
        Self { dim: 8 }
    }
}

pub(crate) fn parse_vector(text: &str) -> Result<Vec<f64>, String> {
    serde_json::from_str(text.trim()).map_err(|e| format!("malformed vector: {e}"))
}

impl Evaluator for SyntheticSphere {
    fn name(&self) -> &str {
        "synthetic_sphere"
    }

    fn direction(&self) -> Direction {
        Direction::Maximize
    }

    fn feature_names(&self) -> Vec<String> {
        vec!["x1".into(), "x2".into()]
    }

    fn feature_dims(&self, bins: usize) -> Vec<Dim> {
        vec![Dim::new(-1.0, 1.0, bins); 2]
    }

    fn initial_program(&self) -> String {
        serde_json::to_string(&vec![0.5; self.dim]).unwrap()
    }

    fn description(&self) -> String {
        format!(
            "A program is a JSON array of {} real numbers. Its score is the negated sum of squares; drive it toward 0.",
            self.dim
        )
    }

    fn evaluate(&self, body: &str) -> EvaluationResult {
        let v = match parse_vector(body) {
            Ok(v) => v,
            Err(e) => return EvaluationResult::failure(FailureKind::ParseError, e),
        };
        if v.len() != self.dim {
            return EvaluationResult::failure(
                FailureKind::ConstraintViolation,
                format!("expected {} coordinates, got {}", self.dim, v.len()),
            );
        }
        if v.iter().any(|x| !x.is_finite()) {
            return EvaluationResult::failure(
                FailureKind::ConstraintViolation,
                "non-finite coordinate",
            );
        }
        let score = -v.iter().map(|x| x * x).sum::<f64>();
        let features = vec![v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0)];
        EvaluationResult::success(score, features)
    }
}
