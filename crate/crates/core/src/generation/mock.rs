//! Offline generator: perturbs the parent genome found in the prompt.
//!
//! Understands circle-packing genomes (lists of circles) and plain numeric
//! vectors. Every coordinate receives independent Gaussian noise of scale
//! `sigma`; circle radii are clamped back to a small positive minimum.

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::backend::{
    estimate_tokens, BackendError, Completion, CompletionRequest, GeneratorBackend,
};
use super::prompt::extract_parent;
use crate::evaluation::{circles_to_genome, parse_circles, Circle};
use crate::rng;

pub const MIN_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
    pub sigma: f64,
}

enum Genome {
    Circles(Vec<Circle>),
    Vector(Vec<f64>),
}

fn parse_genome(text: &str) -> Option<Genome> {
    if let Ok(c) = parse_circles(text) {
        if !c.is_empty() {
            return Some(Genome::Circles(c));
        }
    }
    serde_json::from_str::<Vec<f64>>(text.trim())
        .ok()
        .map(Genome::Vector)
}

fn perturb(genome: &Genome, sigma: f64, rng: &mut impl Rng) -> String {
    let mut noise = || sigma * rng.sample::<f64, _>(StandardNormal);
    match genome {
        Genome::Circles(cs) => {
            let out: Vec<Circle> = cs
                .iter()
                .map(|c| Circle {
                    x: c.x + noise(),
                    y: c.y + noise(),
                    r: (c.r + noise()).max(MIN_RADIUS),
                })
                .collect();
            circles_to_genome(&out)
        }
        Genome::Vector(v) => {
            let out: Vec<f64> = v.iter().map(|x| x + noise()).collect();
            serde_json::to_string(&out).expect("vector serializes")
        }
    }
}

/// Builds a multi-candidate response holding `k` perturbations of `parent`,
/// each stated with probability `1/k`. An unparseable parent yields a single
/// identity candidate.
pub fn mock_mutation_response(parent: &str, k: usize, sigma: f64, rng: &mut impl Rng) -> String {
    let entries: Vec<serde_json::Value> = match parse_genome(parent) {
        Some(genome) => (0..k)
            .map(|_| json!({"code": perturb(&genome, sigma, rng), "probability": 1.0 / k as f64}))
            .collect(),
        None => vec![json!({"code": parent, "probability": 1.0})],
    };
    json!({ "responses": entries }).to_string()
}

impl GeneratorBackend for MockBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let mut rng = rng::stream(
            self.seed,
            &[
                rng::label::MOCK_BACKEND,
                req.island_id as u64,
                req.iteration,
                req.call_index as u64,
            ],
        );
        let response_text = match extract_parent(req.prompt) {
            Some(parent) => mock_mutation_response(parent, req.k, self.sigma, &mut rng),
            None => json!({ "responses": [] }).to_string(),
        };
        Ok(Completion {
            input_tokens: estimate_tokens(req.prompt),
            output_tokens: estimate_tokens(&response_text),
            response_text,
        })
    }
}
