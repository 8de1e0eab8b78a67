//! Program embedders used for clustering and for parent/inspiration distances.

use std::collections::HashMap;
use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{SeedPool, SeedingError};
use crate::generation::JsonClient;

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per body, all of the same dimension.
    fn embed(&self, bodies: &[&str]) -> Result<Vec<Vec<f64>>, SeedingError>;
}

pub const TRIGRAM_DIM: usize = 256;

/// Hashed character-trigram counts, L2-normalized. Bodies shorter than three
/// characters embed to the zero vector.
#[derive(Debug, Clone, Copy)]
pub struct TrigramEmbedder {
    pub dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self { dim: TRIGRAM_DIM }
    }
}

impl TrigramEmbedder {
    pub fn embed_one(&self, body: &str) -> Vec<f64> {
        let chars: Vec<char> = body.chars().collect();
        let mut v = vec![0.0; self.dim];
        for w in chars.windows(3) {
            let mut h = FnvHasher::default();
            for c in w {
                h.write_u32(*c as u32);
            }
            v[(h.finish() % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for TrigramEmbedder {
    fn embed(&self, bodies: &[&str]) -> Result<Vec<Vec<f64>>, SeedingError> {
        Ok(bodies.iter().map(|b| self.embed_one(b)).collect())
    }
}

/// Looks bodies up in a table of vectors supplied with the seed pool.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbedder {
    vectors: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbedder {
    /// Requires every entry of the pool to carry an embedding of a common dimension.
    pub fn from_pool(pool: &SeedPool) -> Result<Self, SeedingError> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for e in &pool.entries {
            let v = e.embedding.as_ref().ok_or_else(|| {
                SeedingError::Embedding(format!("{} has no precomputed embedding", e.file))
            })?;
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(SeedingError::Embedding(format!(
                    "{} has dimension {}, expected {}",
                    e.file,
                    v.len(),
                    dim.unwrap()
                )));
            }
            vectors.insert(e.body.clone(), v.clone());
        }
        Ok(Self { vectors })
    }
}

impl EmbeddingProvider for PrecomputedEmbedder {
    fn embed(&self, bodies: &[&str]) -> Result<Vec<Vec<f64>>, SeedingError> {
        bodies
            .iter()
            .map(|b| {
                self.vectors.get(*b).cloned().ok_or_else(|| {
                    SeedingError::Embedding("body has no precomputed embedding".into())
                })
            })
            .collect()
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, model: &str, api_key_env: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            client: JsonClient::new(
                std::env::var(api_key_env).ok(),
                4,
                3,
                Duration::from_millis(500),
                Duration::from_secs(120),
            ),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, bodies: &[&str]) -> Result<Vec<Vec<f64>>, SeedingError> {
        if bodies.is_empty() {
            return Ok(Vec::new());
        }
        let resp = self
            .client
            .post(
                &self.endpoint,
                &json!({"model": self.model, "input": bodies}),
            )
            .map_err(|e| SeedingError::Embedding(e.to_string()))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| SeedingError::Embedding("response has no \"data\" list".into()))?;
        let mut out = vec![None; bodies.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let v: Vec<f64> = item
                .get("embedding")
                .and_then(|e| serde_json::from_value(e.clone()).ok())
                .ok_or_else(|| {
                    SeedingError::Embedding(format!("item {pos} has no numeric embedding"))
                })?;
            if let Some(slot) = out.get_mut(idx) {
                *slot = Some(v);
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    SeedingError::Embedding(format!("no embedding returned for input {i}"))
                })
            })
            .collect()
    }
}

/// Which embedder to use; serialized in run configs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    #[default]
    Trigram,
    Precomputed,
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
    },
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

impl EmbedderConfig {
    pub fn build(&self, pool: &SeedPool) -> Result<Box<dyn EmbeddingProvider>, SeedingError> {
        Ok(match self {
            EmbedderConfig::Trigram => Box::new(TrigramEmbedder::default()),
            EmbedderConfig::Precomputed => Box::new(PrecomputedEmbedder::from_pool(pool)?),
            EmbedderConfig::Remote {
                endpoint,
                model,
                api_key_env,
            } => Box::new(RemoteEmbedder::new(endpoint, model, api_key_env)),
        })
    }
}

/// Embeds every pool entry and checks the vectors share one dimension.
pub fn embed_pool(
    pool: &SeedPool,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Vec<f64>>, SeedingError> {
    let bodies: Vec<&str> = pool.entries.iter().map(|e| e.body.as_str()).collect();
    let vectors = provider.embed(&bodies)?;
    if vectors.len() != bodies.len() {
        return Err(SeedingError::Embedding(format!(
            "provider returned {} vectors for {} bodies",
            vectors.len(),
            bodies.len()
        )));
    }
    if let Some(first) = vectors.first() {
        if vectors
            .iter()
            .any(|v| v.len() != first.len() || v.iter().any(|x| !x.is_finite()))
        {
            return Err(SeedingError::Embedding(
                "vectors differ in dimension or are not finite".into(),
            ));
        }
    }
    Ok(vectors)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::Direction;
    use crate::generation::remote_stub_server;
    use crate::seeding::SeedEntry;

    #[test]
    fn trigram_is_pure_and_normalized() {
        let e = TrigramEmbedder::default();
        let a = e.embed_one("def f(x): return x * 2");
        assert_eq!(a, e.embed_one("def f(x): return x * 2"));
        assert_eq!(a.len(), TRIGRAM_DIM);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(e.embed_one("ab").iter().all(|&x| x == 0.0));
        let near = e.embed_one("def f(x): return x * 3");
        let far = e.embed_one("[0.1, 0.2, 0.3, 0.4]");
        assert!(euclidean(&a, &near) < euclidean(&a, &far));
    }

    fn pool(embeddings: Vec<Option<Vec<f64>>>) -> SeedPool {
        SeedPool::new(
            embeddings
                .into_iter()
                .enumerate()
                .map(|(i, embedding)| SeedEntry {
                    file: format!("{i}"),
                    body: format!("b{i}"),
                    score: 0.0,
                    embedding,
                })
                .collect(),
            Direction::Maximize,
        )
    }

    #[test]
    fn precomputed_requires_uniform_vectors() {
        let p = pool(vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])]);
        let e = PrecomputedEmbedder::from_pool(&p).unwrap();
        assert_eq!(embed_pool(&p, &e).unwrap()[1], vec![0.0, 1.0]);
        assert!(PrecomputedEmbedder::from_pool(&pool(vec![Some(vec![1.0]), None])).is_err());
        assert!(
            PrecomputedEmbedder::from_pool(&pool(vec![Some(vec![1.0]), Some(vec![1.0, 2.0])]))
                .is_err()
        );
    }

    #[test]
    fn remote_embedder_orders_by_index() {
        let body = r#"{"data":[{"index":1,"embedding":[2.0]},{"index":0,"embedding":[1.0]}]}"#;
        let (url, _) = remote_stub_server(vec![(200, body.into())]);
        let e = RemoteEmbedder::new(&url, "m", "ARCHIPELAGO_TEST_UNSET_KEY");
        assert_eq!(e.embed(&["a", "b"]).unwrap(), vec![vec![1.0], vec![2.0]]);
    }
}
