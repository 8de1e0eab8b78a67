//! Lloyd's k-means with k-means++ initialization.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SeedingError;
use crate::rng;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Member indices per cluster, ascending.
    pub clusters: Vec<Vec<usize>>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    /// Sum of squared distances from each point to its cluster centroid.
    pub fn sse(&self, vectors: &[Vec<f64>]) -> f64 {
        self.clusters
            .iter()
            .zip(&self.centroids)
            .flat_map(|(members, c)| members.iter().map(move |&i| sq_dist(&vectors[i], c)))
            .sum()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(vectors: &[Vec<f64>], m: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| sq_dist(v, &vectors[chosen[0]]))
        .collect();
    while chosen.len() < m {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // Every remaining point coincides with a chosen centre.
            Err(_) => (0..n).find(|i| !chosen.contains(i)).expect("n >= m"),
        };
        chosen.push(next);
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(v, &vectors[next]));
        }
    }
    chosen.into_iter().map(|i| vectors[i].clone()).collect()
}

/// Moves the point farthest from its centroid, among clusters with more than
/// one member, into each empty cluster.
fn repair_empty(vectors: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let m = centroids.len();
    loop {
        let mut sizes = vec![0usize; m];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..vectors.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&vectors[a], &centroids[labels[a]])
                    .total_cmp(&sq_dist(&vectors[b], &centroids[labels[b]]))
                    .then(b.cmp(&a))
            })
            .expect("n >= m leaves a cluster with two members");
        labels[far] = empty;
        centroids[empty] = vectors[far].clone();
    }
}

fn means(vectors: &[Vec<f64>], labels: &[usize], m: usize) -> Vec<Vec<f64>> {
    let dim = vectors[0].len();
    let mut sums = vec![vec![0.0; dim]; m];
    let mut counts = vec![0usize; m];
    for (v, &l) in vectors.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

/// Partitions `vectors` into `m` clusters. Deterministic given `seed`.
pub fn kmeans(
    vectors: &[Vec<f64>],
    m: usize,
    seed: u64,
) -> Result<ClusterAssignment, SeedingError> {
    if m == 0 || vectors.len() < m {
        return Err(SeedingError::InsufficientSeeds {
            have: vectors.len(),
            need: m.max(1),
        });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(SeedingError::Embedding(
            "vectors differ in dimension".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[rng::label::KMEANS]);
    let mut centroids = plus_plus(vectors, m, &mut rng);
    let mut labels = vec![0; vectors.len()];
    for _ in 0..MAX_ITERATIONS {
        for (l, v) in labels.iter_mut().zip(vectors) {
            *l = nearest(v, &centroids).0;
        }
        repair_empty(vectors, &mut labels, &mut centroids);
        let updated = means(vectors, &labels, m);
        let shift = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < TOLERANCE {
            break;
        }
    }
    let mut clusters = vec![Vec::new(); m];
    for (i, &l) in labels.iter().enumerate() {
        clusters[l].push(i);
    }
    Ok(ClusterAssignment {
        clusters,
        centroids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(raw: &[(f64, f64)]) -> Vec<Vec<f64>> {
        raw.iter().map(|&(x, y)| vec![x, y]).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let v = pts(&[(0.0, 0.0), (2.0, 0.0), (1.0, 3.0)]);
        let a = kmeans(&v, 1, 7).unwrap();
        assert_eq!(a.clusters, vec![vec![0, 1, 2]]);
        assert_eq!(a.centroids[0], vec![1.0, 1.0]);
    }

    #[test]
    fn separated_groups_recovered() {
        let v = pts(&[(0.0, 0.0), (10.0, 10.0), (0.0, 0.1), (10.0, 10.1)]);
        for seed in 0..20 {
            let mut clusters = kmeans(&v, 2, seed).unwrap().clusters;
            clusters.sort();
            assert_eq!(clusters, vec![vec![0, 2], vec![1, 3]]);
        }
    }

    #[test]
    fn one_point_per_cluster() {
        let v = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (5.0, 5.0)]);
        let a = kmeans(&v, 4, 3).unwrap();
        assert!(a.clusters.iter().all(|c| c.len() == 1));
        assert_eq!(a.sse(&v), 0.0);
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let v = pts(&[(1.0, 1.0); 5]);
        let a = kmeans(&v, 3, 0).unwrap();
        assert!(a.clusters.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn too_few_vectors() {
        assert!(matches!(
            kmeans(&pts(&[(0.0, 0.0)]), 2, 0),
            Err(SeedingError::InsufficientSeeds { have: 1, need: 2 })
        ));
    }

    proptest! {
        #[test]
        fn partition_and_determinism(
            raw in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            m in 1usize..6,
            seed in any::<u64>(),
        ) {
            let v = pts(&raw);
            prop_assume!(v.len() >= m);
            let a = kmeans(&v, m, seed).unwrap();
            prop_assert_eq!(&a, &kmeans(&v, m, seed).unwrap());
            let mut all: Vec<usize> = a.clusters.concat();
            all.sort();
            prop_assert_eq!(all, (0..v.len()).collect::<Vec<_>>());
            prop_assert!(a.clusters.iter().all(|c| !c.is_empty()));
        }
    }
}
