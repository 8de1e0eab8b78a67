//! Circle packing in the unit square: maximize the sum of radii of `n`
//! pairwise disjoint circles.

use serde::{Deserialize, Serialize};

use super::{EvaluationResult, Evaluator, FailureKind};
use crate::archive::{Dim, Direction};

/// Overlap and containment tolerance; tangent circles must be accepted.
pub const CIRCLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CircleRepr {
    Object { x: f64, y: f64, r: f64 },
    Triple([f64; 3]),
}

/// Parses a genome: a JSON array of `{"x","y","r"}` objects or `[x, y, r]` triples.
pub fn parse_circles(text: &str) -> Result<Vec<Circle>, String> {
    let reprs: Vec<CircleRepr> =
        serde_json::from_str(text.trim()).map_err(|e| format!("malformed genome: {e}"))?;
    Ok(reprs
        .into_iter()
        .map(|c| match c {
            CircleRepr::Object { x, y, r } => Circle { x, y, r },
            CircleRepr::Triple([x, y, r]) => Circle { x, y, r },
        })
        .collect())
}

pub fn circles_to_genome(circles: &[Circle]) -> String {
    serde_json::to_string(circles).expect("circles serialize")
}

#[derive(Debug, Clone)]
pub struct CirclePacking {
    pub n: usize,
    pub eps: f64,
    pub mean_bounds: (f64, f64),
    pub std_bounds: (f64, f64),
}

impl CirclePacking {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            eps: CIRCLE_EPS,
            mean_bounds: (0.0, 0.25),
            std_bounds: (0.0, 0.15),
        }
    }

    /// First violated constraint, if any.
    pub fn violation(&self, circles: &[Circle]) -> Option<String> {
        if circles.len() != self.n {
            return Some(format!(
                "expected {} circles, got {}",
                self.n,
                circles.len()
            ));
        }
        let eps = self.eps;
        for (i, c) in circles.iter().enumerate() {
            if !(c.x.is_finite() && c.y.is_finite() && c.r.is_finite()) {
                return Some(format!("circle {i} has non-finite values"));
            }
            if c.r <= 0.0 {
                return Some(format!("circle {i} has non-positive radius {}", c.r));
            }
            if c.x - c.r < -eps
                || c.x + c.r > 1.0 + eps
                || c.y - c.r < -eps
                || c.y + c.r > 1.0 + eps
            {
                return Some(format!("circle {i} leaves the unit square"));
            }
        }
        for i in 0..circles.len() {
            for j in i + 1..circles.len() {
                let (a, b) = (circles[i], circles[j]);
                let dist = (a.x - b.x).hypot(a.y - b.y);
                if dist < a.r + b.r - eps {
                    return Some(format!("circles {i} and {j} overlap"));
                }
            }
        }
        None
    }
}

impl Evaluator for CirclePacking {
    fn name(&self) -> &str {
        "circle_packing"
    }

    fn direction(&self) -> Direction {
        Direction::Maximize
    }

    fn feature_names(&self) -> Vec<String> {
        vec!["mean_radius".into(), "radius_std".into()]
    }

    fn feature_dims(&self, bins: usize) -> Vec<Dim> {
        vec![
            Dim::new(self.mean_bounds.0, self.mean_bounds.1, bins),
            Dim::new(self.std_bounds.0, self.std_bounds.1, bins),
        ]
    }

    /// Row-major grid with half-size circles, always feasible.
    fn initial_program(&self) -> String {
        let side = (self.n as f64).sqrt().ceil().max(1.0) as usize;
        let cell = 1.0 / side as f64;
        let circles: Vec<Circle> = (0..self.n)
            .map(|i| Circle {
                x: cell * ((i % side) as f64 + 0.5),
                y: cell * ((i / side) as f64 + 0.5),
                r: cell * 0.25,
            })
            .collect();
        circles_to_genome(&circles)
    }

    fn description(&self) -> String {
        format!(
            "Place {} pairwise disjoint circles inside the unit square so that the sum of their radii is maximal. \
             A program is a JSON array of circles, each an object with fields \"x\", \"y\" (center) and \"r\" (radius).",
            self.n
        )
    }

    fn evaluate(&self, body: &str) -> EvaluationResult {
        let circles = match parse_circles(body) {
            Ok(c) => c,
            Err(e) => return EvaluationResult::failure(FailureKind::ParseError, e),
        };
        if let Some(v) = self.violation(&circles) {
            return EvaluationResult::failure(FailureKind::ConstraintViolation, v);
        }
        let n = circles.len() as f64;
        let score: f64 = circles.iter().map(|c| c.r).sum();
        let mean = score / n;
        let var = circles.iter().map(|c| (c.r - mean).powi(2)).sum::<f64>() / n;
        EvaluationResult::success(score, vec![mean, var.sqrt()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(n: usize, body: &str) -> EvaluationResult {
        CirclePacking::new(n).evaluate(body)
    }

    #[test]
    fn inscribed_circle() {
        let r = eval(1, r#"[{"x":0.5,"y":0.5,"r":0.5}]"#);
        assert!(r.valid);
        assert_eq!(r.score, Some(0.5));
        assert_eq!(r.features, Some(vec![0.5, 0.0]));
    }

    #[test]
    fn tangent_pair_accepted() {
        let r = eval(2, "[[0.25,0.5,0.25],[0.75,0.5,0.25]]");
        assert!(r.valid, "{r:?}");
        assert_eq!(r.score, Some(0.5));
    }

    #[test]
    fn overlap_beyond_eps_rejected() {
        let r = eval(2, "[[0.25,0.5,0.25],[0.7499,0.5,0.25]]");
        assert_eq!(r.failure, Some(FailureKind::ConstraintViolation));
    }

    #[test]
    fn failures() {
        assert_eq!(eval(1, "not json").failure, Some(FailureKind::ParseError));
        assert_eq!(
            eval(2, r#"[{"x":0.5,"y":0.5,"r":0.1}]"#).failure,
            Some(FailureKind::ConstraintViolation)
        );
        assert_eq!(
            eval(1, r#"[{"x":0.5,"y":0.5,"r":0.0}]"#).failure,
            Some(FailureKind::ConstraintViolation)
        );
        assert_eq!(
            eval(1, r#"[{"x":0.95,"y":0.5,"r":0.1}]"#).failure,
            Some(FailureKind::ConstraintViolation)
        );
    }

    #[test]
    fn default_program_is_feasible() {
        for n in [1, 2, 5, 26] {
            let task = CirclePacking::new(n);
            assert!(task.evaluate(&task.initial_program()).valid, "n={n}");
        }
    }

    #[test]
    fn deterministic() {
        let task = CirclePacking::new(26);
        let g = task.initial_program();
        assert_eq!(task.evaluate(&g).score, task.evaluate(&g).score);
    }
}
