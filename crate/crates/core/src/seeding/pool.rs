//! Seed-pool storage: a directory of program files plus a line-delimited manifest.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SeedingError;
use crate::archive::Direction;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedEntry {
    /// File name inside the pool directory.
    pub file: String,
    pub body: String,
    pub score: f64,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedPool {
    pub entries: Vec<SeedEntry>,
    pub direction: Direction,
}

impl SeedPool {
    pub fn new(entries: Vec<SeedEntry>, direction: Direction) -> Self {
        Self { entries, direction }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Orders two entries best-first; equal scores keep pool order.
    pub fn compare(&self, a: usize, b: usize) -> Ordering {
        let (sa, sb) = (
            self.direction.orient(self.entries[a].score),
            self.direction.orient(self.entries[b].score),
        );
        sb.total_cmp(&sa).then(a.cmp(&b))
    }

    /// `indices` sorted best-first.
    pub fn ranked(&self, indices: &[usize]) -> Vec<usize> {
        let mut v = indices.to_vec();
        v.sort_by(|&a, &b| self.compare(a, b));
        v
    }

    /// Loads a pool directory. Embedding files hold a JSON array of numbers and
    /// are resolved relative to the directory.
    pub fn load(dir: &Path, direction: Direction) -> Result<Self, SeedingError> {
        let manifest = dir.join(MANIFEST);
        let file = fs::File::open(&manifest).map_err(|e| SeedingError::io(&manifest, e))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| SeedingError::io(&manifest, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
                SeedingError::Manifest(format!("{}:{}: {e}", manifest.display(), n + 1))
            })?;
            if !rec.score.is_finite() {
                return Err(SeedingError::Manifest(format!(
                    "{}:{}: score must be finite",
                    manifest.display(),
                    n + 1
                )));
            }
            let path = dir.join(&rec.file);
            let body = fs::read_to_string(&path).map_err(|e| SeedingError::io(&path, e))?;
            let embedding = match &rec.embedding_file {
                None => None,
                Some(f) => {
                    let path = dir.join(f);
                    let text = fs::read_to_string(&path).map_err(|e| SeedingError::io(&path, e))?;
                    Some(
                        serde_json::from_str(&text).map_err(|e| {
                            SeedingError::Manifest(format!("{}: {e}", path.display()))
                        })?,
                    )
                }
            };
            entries.push(SeedEntry {
                file: rec.file,
                body,
                score: rec.score,
                embedding,
            });
        }
        Ok(Self::new(entries, direction))
    }

    /// Writes the pool in the layout [`SeedPool::load`] reads. Embeddings are
    /// stored next to their program as `<file>.embedding.json`.
    pub fn write(&self, dir: &Path) -> Result<(), SeedingError> {
        fs::create_dir_all(dir).map_err(|e| SeedingError::io(dir, e))?;
        let manifest = dir.join(MANIFEST);
        let mut out = BufWriter::new(
            fs::File::create(&manifest).map_err(|e| SeedingError::io(&manifest, e))?,
        );
        for entry in &self.entries {
            let path = dir.join(&entry.file);
            fs::write(&path, &entry.body).map_err(|e| SeedingError::io(&path, e))?;
            let embedding_file = match &entry.embedding {
                None => None,
                Some(v) => {
                    let name = format!("{}.embedding.json", entry.file);
                    let path = dir.join(&name);
                    fs::write(&path, serde_json::to_string(v).expect("vector serializes"))
                        .map_err(|e| SeedingError::io(&path, e))?;
                    Some(name)
                }
            };
            let rec = ManifestRecord {
                file: entry.file.clone(),
                score: entry.score,
                embedding_file,
            };
            writeln!(
                out,
                "{}",
                serde_json::to_string(&rec).expect("record serializes")
            )
            .map_err(|e| SeedingError::io(&manifest, e))?;
        }
        out.flush().map_err(|e| SeedingError::io(&manifest, e))
    }

    /// Drops the best `floor(q * n)` entries by score, keeping the rest in pool order.
    pub fn degrade(&self, fraction: f64) -> Result<Self, SeedingError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(SeedingError::Config(format!(
                "fraction {fraction} outside [0, 1]"
            )));
        }
        let drop = ((fraction * self.len() as f64) + 1e-9).floor() as usize;
        let all: Vec<usize> = (0..self.len()).collect();
        let mut dropped = vec![false; self.len()];
        for &i in self.ranked(&all).iter().take(drop) {
            dropped[i] = true;
        }
        let entries = self
            .entries
            .iter()
            .zip(dropped)
            .filter(|(_, d)| !d)
            .map(|(e, _)| e.clone())
            .collect();
        Ok(Self::new(entries, self.direction))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(scores: &[f64]) -> SeedPool {
        SeedPool::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| SeedEntry {
                    file: format!("p{i:03}.txt"),
                    body: format!("body {i}"),
                    score: s,
                    embedding: (i % 2 == 0).then(|| vec![i as f64, 0.5]),
                })
                .collect(),
            Direction::Maximize,
        )
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = pool(&[1.0, 2.5, -3.0]);
        p.write(dir.path()).unwrap();
        assert_eq!(SeedPool::load(dir.path(), Direction::Maximize).unwrap(), p);
    }

    #[test]
    fn degrade_drops_top_fraction() {
        let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let p = pool(&scores);
        let d = p.degrade(0.2).unwrap();
        assert_eq!(d.len(), 80);
        assert!(d.entries.iter().all(|e| e.score < 80.0));
        assert_eq!(p.degrade(0.0).unwrap(), p);
        assert!(p.degrade(1.0).unwrap().is_empty());
        assert!(p.degrade(1.5).is_err());
    }

    #[test]
    fn minimize_ranks_low_scores_first() {
        let mut p = pool(&[3.0, 1.0, 2.0, 1.0]);
        p.direction = Direction::Minimize;
        assert_eq!(p.ranked(&[0, 1, 2, 3]), vec![1, 3, 2, 0]);
        assert_eq!(p.degrade(0.5).unwrap().entries.len(), 2);
        assert_eq!(p.degrade(0.5).unwrap().entries[0].score, 3.0);
    }

    #[test]
    fn manifest_errors_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(SeedPool::load(dir.path(), Direction::Maximize).is_err());
        fs::write(
            dir.path().join(MANIFEST),
            "{\"file\": \"missing.txt\", \"score\": 1}\n",
        )
        .unwrap();
        assert!(matches!(
            SeedPool::load(dir.path(), Direction::Maximize),
            Err(SeedingError::Io(_))
        ));
        fs::write(dir.path().join(MANIFEST), "{\"score\": 1}\n").unwrap();
        assert!(matches!(
            SeedPool::load(dir.path(), Direction::Maximize),
            Err(SeedingError::Manifest(_))
        ));
    }
}
