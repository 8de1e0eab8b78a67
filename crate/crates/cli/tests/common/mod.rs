#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use archipelago::evaluation::{circles_to_genome, Circle};
use archipelago::seeding::{ManifestRecord, MANIFEST};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_archipelago"))
}

pub fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn archipelago")
}

/// A 5x5 grid of equal circles scaled to `scale` of the tangent radius 0.1,
/// with centre jitter, plus one small circle in an interstitial gap.
pub fn grid_genome(scale: f64, jitter: f64, rng: &mut impl Rng) -> Vec<Circle> {
    let r = 0.1 * scale;
    let mut circles: Vec<Circle> = (0..25)
        .map(|k| Circle {
            x: 0.1 + 0.2 * (k % 5) as f64 + rng.random_range(-jitter..=jitter),
            y: 0.1 + 0.2 * (k / 5) as f64 + rng.random_range(-jitter..=jitter),
            r,
        })
        .collect();
    let gaps = [0.2, 0.4, 0.6, 0.8];
    circles.push(Circle {
        x: gaps[rng.random_range(0..4)],
        y: gaps[rng.random_range(0..4)],
        r: 0.02,
    });
    circles
}

/// Writes a circle-packing seed pool of grid-derived genomes with scales
/// `start, start + step, ...`. Returns the manifest scores in file order.
pub fn write_grid_pool(dir: &Path, count: usize, start: f64, step: f64, seed: u64) -> Vec<f64> {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::new();
    let mut scores = Vec::new();
    for i in 0..count {
        let circles = grid_genome(start + step * i as f64, 0.002, &mut rng);
        let score: f64 = circles.iter().map(|c| c.r).sum();
        let file = format!("seed_{i:03}.json");
        fs::write(dir.join(&file), circles_to_genome(&circles)).unwrap();
        let rec = ManifestRecord {
            file,
            score,
            embedding_file: None,
        };
        manifest.push_str(&serde_json::to_string(&rec).unwrap());
        manifest.push('\n');
        scores.push(score);
    }
    fs::write(dir.join(MANIFEST), manifest).unwrap();
    scores
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}
