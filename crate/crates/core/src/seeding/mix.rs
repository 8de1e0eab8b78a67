//! Copy-and-mix perturbation of cluster assignments.
//!
//! Each cluster copies its best `ceil(d * n)` members into a shared pool. Each
//! cluster then receives `floor(d * n)` pool entries from other clusters and
//! evicts as many of its lowest-ranked members, never touching its top
//! `ceil(rho * n)` original elites.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SeedPool;

/// Rounding slack so that products like `0.3 * 10` land on the intended integer.
const ROUNDING_SLACK: f64 = 1e-9;

pub fn ceil_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) - ROUNDING_SLACK).ceil().max(0.0) as usize
}

pub fn floor_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + ROUNDING_SLACK).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    /// Index into the seed pool.
    pub index: usize,
    pub source_cluster: usize,
}

/// Copies the top `ceil(d * |C_i|)` of every cluster; clusters are untouched.
pub fn build_shared_pool(clusters: &[Vec<usize>], pool: &SeedPool, d: f64) -> Vec<PoolEntry> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(i, members)| {
            let take = ceil_count(d, members.len());
            pool.ranked(members)
                .into_iter()
                .take(take)
                .map(move |index| PoolEntry {
                    index,
                    source_cluster: i,
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixOutcome {
    /// Members after mixing, in original-then-injected order minus evictions.
    pub members: Vec<usize>,
    pub injected: Vec<usize>,
    pub evicted: Vec<usize>,
    pub protected: Vec<usize>,
}

/// Mixes cluster `cluster_id`. Injected entries are drawn uniformly without
/// replacement from pool entries of other clusters; when fewer are available
/// than requested, all of them are injected and as many evicted.
///
/// Eviction removes the lowest-ranked unprotected members of the appended
/// list; among equal scores, later positions go first.
pub fn inject_and_evict(
    cluster: &[usize],
    cluster_id: usize,
    shared: &[PoolEntry],
    pool: &SeedPool,
    d: f64,
    rho: f64,
    rng: &mut impl Rng,
) -> MixOutcome {
    let n = cluster.len();
    let foreign: Vec<usize> = shared
        .iter()
        .filter(|e| e.source_cluster != cluster_id)
        .map(|e| e.index)
        .collect();
    let r = floor_count(d, n).min(foreign.len());
    let mut picks = index::sample(rng, foreign.len(), r).into_vec();
    picks.sort_unstable();
    let injected: Vec<usize> = picks.into_iter().map(|p| foreign[p]).collect();

    let protected: Vec<usize> = pool
        .ranked(cluster)
        .into_iter()
        .take(ceil_count(rho, n))
        .collect();

    let appended: Vec<usize> = cluster.iter().chain(&injected).copied().collect();
    let mut order: Vec<usize> = (0..appended.len())
        .filter(|&pos| pos >= n || !protected.contains(&appended[pos]))
        .collect();
    // Worst first; among equal scores the later position is evicted first.
    order.sort_by(|&a, &b| {
        let (sa, sb) = (
            pool.direction.orient(pool.entries[appended[a]].score),
            pool.direction.orient(pool.entries[appended[b]].score),
        );
        sa.total_cmp(&sb).then(b.cmp(&a))
    });
    let mut evict_pos: Vec<usize> = order.into_iter().take(r).collect();
    evict_pos.sort_unstable();

    let evicted = evict_pos.iter().map(|&p| appended[p]).collect();
    let members = appended
        .iter()
        .enumerate()
        .filter(|(p, _)| evict_pos.binary_search(p).is_err())
        .map(|(_, &e)| e)
        .collect();
    MixOutcome {
        members,
        injected,
        evicted,
        protected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::Direction;
    use crate::rng;
    use crate::seeding::SeedEntry;
    use proptest::prelude::*;

    fn pool(scores: &[f64]) -> SeedPool {
        SeedPool::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &score)| SeedEntry {
                    file: format!("{i}"),
                    body: String::new(),
                    score,
                    embedding: None,
                })
                .collect(),
            Direction::Maximize,
        )
    }

    #[test]
    fn rounding() {
        assert_eq!(ceil_count(0.2, 10), 2);
        assert_eq!(ceil_count(0.3, 7), 3);
        assert_eq!(ceil_count(0.0, 7), 0);
        assert_eq!(ceil_count(0.3, 10), 3);
        assert_eq!(floor_count(0.3, 10), 3);
        assert_eq!(floor_count(0.7, 10), 7);
        assert_eq!(floor_count(0.5, 5), 2);
    }

    #[test]
    fn shared_pool_copies_top_entries() {
        let p = pool(&(0..17).map(|i| i as f64).collect::<Vec<_>>());
        let clusters = vec![(0..10).collect::<Vec<_>>(), (10..17).collect()];
        let shared = build_shared_pool(&clusters, &p, 0.2);
        assert_eq!(
            shared,
            vec![
                PoolEntry {
                    index: 9,
                    source_cluster: 0
                },
                PoolEntry {
                    index: 8,
                    source_cluster: 0
                },
                PoolEntry {
                    index: 16,
                    source_cluster: 1
                },
                PoolEntry {
                    index: 15,
                    source_cluster: 1
                },
            ]
        );
        assert!(build_shared_pool(&clusters, &p, 0.0).is_empty());
        assert_eq!(build_shared_pool(&clusters, &p, 0.3).len(), 3 + 3);
    }

    #[test]
    fn ten_members_inject_two() {
        let p = pool(&(0..20).map(|i| i as f64).collect::<Vec<_>>());
        let clusters = vec![(0..10).collect::<Vec<_>>(), (10..20).collect()];
        let shared = build_shared_pool(&clusters, &p, 0.2);
        let out = inject_and_evict(
            &clusters[0],
            0,
            &shared,
            &p,
            0.2,
            0.3,
            &mut rng::stream(1, &[]),
        );
        assert_eq!(out.injected.len(), 2);
        assert_eq!(out.evicted, vec![0, 1]);
        assert_eq!(out.members.len(), 10);
        assert_eq!(out.protected, vec![9, 8, 7]);
        assert!(out.injected.iter().all(|i| *i >= 10));
    }

    #[test]
    fn zero_ratio_is_identity() {
        let p = pool(&[1.0, 2.0, 3.0]);
        let clusters = vec![vec![0, 1], vec![2]];
        let shared = build_shared_pool(&clusters, &p, 0.0);
        let out = inject_and_evict(
            &clusters[0],
            0,
            &shared,
            &p,
            0.0,
            0.5,
            &mut rng::stream(1, &[]),
        );
        assert_eq!(out.members, vec![0, 1]);
        assert!(out.injected.is_empty() && out.evicted.is_empty());
    }

    #[test]
    fn full_protection_evicts_injected() {
        let mut scores = vec![10.0, 11.0, 12.0, 13.0, 14.0];
        scores.extend([1.0, 2.0, 3.0, 4.0, 5.0]);
        let p = pool(&scores);
        let clusters = vec![(0..5).collect::<Vec<_>>(), (5..10).collect()];
        let shared = build_shared_pool(&clusters, &p, 0.5);
        let out = inject_and_evict(
            &clusters[0],
            0,
            &shared,
            &p,
            0.5,
            1.0,
            &mut rng::stream(2, &[]),
        );
        assert_eq!(out.injected.len(), 2);
        assert_eq!(out.members, vec![0, 1, 2, 3, 4]);
        let mut ev = out.evicted.clone();
        ev.sort();
        let mut inj = out.injected.clone();
        inj.sort();
        assert_eq!(ev, inj);
    }

    #[test]
    fn limited_pool_injects_what_exists() {
        let p = pool(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let clusters = vec![vec![0, 1, 2, 3], vec![4]];
        let shared = build_shared_pool(&clusters, &p, 0.5);
        let out = inject_and_evict(
            &clusters[0],
            0,
            &shared,
            &p,
            0.5,
            0.0,
            &mut rng::stream(3, &[]),
        );
        assert_eq!(out.injected, vec![4]);
        assert_eq!(out.evicted, vec![0]);
        assert_eq!(out.members.len(), 4);
    }

    proptest! {
        #[test]
        fn mixing_invariants(
            sizes in prop::collection::vec(1usize..30, 1..5),
            d in 0.0f64..=1.0,
            rho in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let total: usize = sizes.iter().sum();
            let scores: Vec<f64> = (0..total).map(|i| ((i * 7919) % 13) as f64).collect();
            let p = pool(&scores);
            let mut clusters = Vec::new();
            let mut next = 0;
            for s in &sizes {
                clusters.push((next..next + s).collect::<Vec<_>>());
                next += s;
            }
            let shared = build_shared_pool(&clusters, &p, d);
            for (i, c) in clusters.iter().enumerate() {
                let mut r = rng::stream(seed, &[i as u64]);
                let out = inject_and_evict(c, i, &shared, &p, d, rho, &mut r);
                let again = inject_and_evict(c, i, &shared, &p, d, rho, &mut rng::stream(seed, &[i as u64]));
                prop_assert_eq!(&out, &again);
                prop_assert_eq!(out.members.len(), c.len());
                let avail = shared.iter().filter(|e| e.source_cluster != i).count();
                prop_assert_eq!(out.injected.len(), floor_count(d, c.len()).min(avail));
                prop_assert_eq!(out.evicted.len(), out.injected.len());
                prop_assert!(out.protected.iter().all(|e| out.members.contains(e)));
                prop_assert_eq!(out.protected.len(), ceil_count(rho, c.len()));
                prop_assert!(out.injected.iter().all(|e| !c.contains(e)));
            }
        }
    }
}
