//! Offline analyses over generation events.
//!
//! Each analysis first reduces every run to per-run means and then reports
//! the median and interquartile range of those means across runs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GenerationEvent, RunLog, TelemetryError};
use crate::archive::Direction;

pub const TIERS: usize = 5;
pub const DECILES: usize = 10;

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Median and quartiles of per-run values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: Option<f64>,
    pub iqr_lo: Option<f64>,
    pub iqr_hi: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Summary {
        n: v.len(),
        median: quantile(&v, 0.5),
        iqr_lo: quantile(&v, 0.25),
        iqr_hi: quantile(&v, 0.75),
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefixStats {
    /// Some valid candidate among the first `m` improves on the parent.
    pub coverage: bool,
    /// Largest valid delta among the first `m`.
    pub best_delta: Option<f64>,
}

/// Statistics over the candidates of rank at most `m`.
pub fn prefix_stats(event: &GenerationEvent, m: usize) -> PrefixStats {
    let deltas = event
        .candidates
        .iter()
        .filter(|c| c.rank <= m && c.valid)
        .filter_map(|c| c.delta);
    let best_delta = deltas.reduce(f64::max);
    PrefixStats {
        coverage: best_delta.is_some_and(|d| d > 0.0),
        best_delta,
    }
}

/// Quantile tier (1..=5) of each event by its best inspiration score; ties
/// keep event order. Tier sizes differ by at most one.
pub fn tier_assignment(events: &[&GenerationEvent], direction: Direction) -> Vec<usize> {
    let n = events.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        events[a]
            .tier_key(direction)
            .total_cmp(&events[b].tier_key(direction))
            .then(a.cmp(&b))
    });
    let mut tiers = vec![0; n];
    for (pos, idx) in order.into_iter().enumerate() {
        tiers[idx] = pos * TIERS / n + 1;
    }
    tiers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopmRow {
    /// `"1"` to `"5"`, or `"all"`.
    pub tier: String,
    pub m: usize,
    pub n_events: usize,
    pub coverage: Summary,
    pub best_delta: Summary,
}

fn tier_labels() -> Vec<(String, Option<usize>)> {
    (1..=TIERS)
        .map(|t| (t.to_string(), Some(t)))
        .chain(std::iter::once(("all".to_string(), None)))
        .collect()
}

/// Improvement coverage and best delta of the top-`m` prefix, for `m` in
/// `1..=k`, stratified by inspiration tier. Only events that used `k`
/// candidates enter.
pub fn topm_replay(runs: &[RunLog], k: u32) -> Result<Vec<TopmRow>, TelemetryError> {
    let per_run: Vec<(Vec<&GenerationEvent>, Vec<usize>)> = runs
        .iter()
        .map(|r| {
            let events: Vec<&GenerationEvent> = r.events.iter().filter(|e| e.k_used == k).collect();
            let tiers = tier_assignment(&events, r.direction());
            (events, tiers)
        })
        .collect();
    if per_run.iter().all(|(e, _)| e.is_empty()) {
        return Err(TelemetryError::Analysis(format!(
            "no events with k_used = {k}"
        )));
    }
    let mut rows = Vec::new();
    for (label, tier) in tier_labels() {
        for m in 1..=k as usize {
            let mut coverage = Vec::new();
            let mut best = Vec::new();
            let mut n_events = 0;
            for (events, tiers) in &per_run {
                let selected: Vec<PrefixStats> = events
                    .iter()
                    .zip(tiers)
                    .filter(|(_, t)| tier.is_none_or(|want| **t == want))
                    .map(|(e, _)| prefix_stats(e, m))
                    .collect();
                n_events += selected.len();
                if let Some(c) = mean(selected.iter().map(|s| f64::from(u8::from(s.coverage)))) {
                    coverage.push(c);
                }
                if let Some(b) = mean(selected.iter().filter_map(|s| s.best_delta)) {
                    best.push(b);
                }
            }
            rows.push(TopmRow {
                tier: label.clone(),
                m,
                n_events,
                coverage: summarize(&coverage),
                best_delta: summarize(&best),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankGroup {
    Head,
    Mid,
    Tail,
}

impl RankGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            RankGroup::Head => "head",
            RankGroup::Mid => "mid",
            RankGroup::Tail => "tail",
        }
    }
}

/// Ranks 1-2 are head, 3-5 mid, 6-7 tail.
pub fn rank_group(rank: usize) -> Option<RankGroup> {
    match rank {
        1 | 2 => Some(RankGroup::Head),
        3..=5 => Some(RankGroup::Mid),
        6 | 7 => Some(RankGroup::Tail),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    /// A rank (`"1"`..) or a group name.
    pub bucket: String,
    pub n_candidates: usize,
    pub n_valid: usize,
    /// Valid candidates without a recorded cell, left out of the distance.
    pub n_missing_cell: usize,
    pub validity_rate: Summary,
    pub mean_delta_valid: Summary,
    pub mean_cell_distance: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub run_id: String,
    pub island_id: usize,
    pub iteration: u64,
    pub rank: usize,
    pub delta: f64,
    pub cell_distance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub ranks: Vec<RankRow>,
    pub groups: Vec<RankRow>,
    pub scatter: Vec<ScatterRow>,
}

fn rank_row(runs: &[RunLog], k: u32, bucket: String, keep: impl Fn(usize) -> bool) -> RankRow {
    let mut row = RankRow {
        bucket,
        n_candidates: 0,
        n_valid: 0,
        n_missing_cell: 0,
        validity_rate: Summary::default(),
        mean_delta_valid: Summary::default(),
        mean_cell_distance: Summary::default(),
    };
    let (mut validity, mut delta, mut dist) = (Vec::new(), Vec::new(), Vec::new());
    for run in runs {
        let (mut n, mut valid) = (0usize, 0usize);
        let (mut deltas, mut dists) = (Vec::new(), Vec::new());
        for e in run.events.iter().filter(|e| e.k_used == k) {
            for c in e.candidates.iter().filter(|c| keep(c.rank)) {
                n += 1;
                if !c.valid {
                    continue;
                }
                valid += 1;
                deltas.extend(c.delta);
                match &c.cell_index {
                    Some(cell) => dists.push(cell.l1_distance(&e.parent_cell) as f64),
                    None => row.n_missing_cell += 1,
                }
            }
        }
        row.n_candidates += n;
        row.n_valid += valid;
        if n > 0 {
            validity.push(valid as f64 / n as f64);
        }
        delta.extend(mean(deltas));
        dist.extend(mean(dists));
    }
    row.validity_rate = summarize(&validity);
    row.mean_delta_valid = summarize(&delta);
    row.mean_cell_distance = summarize(&dist);
    row
}

/// Per-rank validity, improvement, and cell distance to the parent over
/// events that used `k` candidates, plus head/mid/tail groups and the
/// valid-candidate scatter table.
pub fn rank_profile(runs: &[RunLog], k: u32) -> RankProfile {
    let ranks = (1..=k as usize)
        .map(|r| rank_row(runs, k, r.to_string(), |x| x == r))
        .collect();
    let groups = [RankGroup::Head, RankGroup::Mid, RankGroup::Tail]
        .into_iter()
        .map(|g| {
            rank_row(runs, k, g.as_str().to_string(), |x| {
                rank_group(x) == Some(g)
            })
        })
        .collect();
    let mut scatter = Vec::new();
    for run in runs {
        for e in run.events.iter().filter(|e| e.k_used == k) {
            for c in &e.candidates {
                if let (true, Some(delta), Some(cell)) = (c.valid, c.delta, &c.cell_index) {
                    scatter.push(ScatterRow {
                        run_id: run.header.run_id.clone(),
                        island_id: e.island_id,
                        iteration: e.iteration,
                        rank: c.rank,
                        delta,
                        cell_distance: cell.l1_distance(&e.parent_cell),
                    });
                }
            }
        }
    }
    RankProfile {
        ranks,
        groups,
        scatter,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub decile: usize,
    pub k: u32,
    pub n_events: usize,
    pub p_improve: Summary,
    pub e_delta_best: Summary,
}

/// Decile (1..=10) of each distance within one run. With fewer than ten
/// values the bins are rank-based and the second value is `true`.
pub(crate) fn deciles(distances: &[f64]) -> (Vec<usize>, bool) {
    let n = distances.len();
    if n < DECILES {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let mut bins = vec![0; n];
        for (pos, idx) in order.into_iter().enumerate() {
            bins[idx] = pos * DECILES / n + 1;
        }
        return (bins, true);
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..DECILES)
        .map(|j| quantile(&sorted, j as f64 / DECILES as f64).unwrap())
        .collect();
    let bins = distances
        .iter()
        .map(|d| 1 + cuts.iter().filter(|&&c| *d > c).count())
        .collect();
    (bins, false)
}

/// Improvement probability and mean best delta on the grid of within-run
/// pre-distance deciles by candidate count. Events without a recorded
/// distance are skipped. Returns the rows and any warnings.
pub fn distance_k_grid(runs: &[RunLog], k_set: &[u32]) -> (Vec<GridRow>, Vec<String>) {
    let mut ks: BTreeSet<u32> = k_set.iter().copied().collect();
    let mut warnings = Vec::new();
    let mut binned: Vec<Vec<(usize, &GenerationEvent)>> = Vec::new();
    for run in runs {
        let events: Vec<&GenerationEvent> = run
            .events
            .iter()
            .filter(|e| e.pre_distance.is_some())
            .collect();
        ks.extend(events.iter().map(|e| e.k_used));
        let skipped = run.events.len() - events.len();
        if skipped > 0 {
            warnings.push(format!(
                "run {}: {skipped} event(s) without pre_distance skipped",
                run.header.run_id
            ));
        }
        let d: Vec<f64> = events.iter().map(|e| e.pre_distance.unwrap()).collect();
        let (bins, rank_based) = deciles(&d);
        if rank_based && !d.is_empty() {
            warnings.push(format!(
                "run {}: only {} event(s), using rank-based bins",
                run.header.run_id,
                d.len()
            ));
        }
        binned.push(bins.into_iter().zip(events).collect());
    }
    let mut rows = Vec::new();
    for decile in 1..=DECILES {
        for &k in &ks {
            let (mut p, mut e, mut n_events) = (Vec::new(), Vec::new(), 0);
            for run in &binned {
                let cell: Vec<&GenerationEvent> = run
                    .iter()
                    .filter(|(b, ev)| *b == decile && ev.k_used == k)
                    .map(|(_, ev)| *ev)
                    .collect();
                n_events += cell.len();
                p.extend(mean(
                    cell.iter().map(|ev| f64::from(u8::from(ev.improved()))),
                ));
                e.extend(mean(cell.iter().filter_map(|ev| ev.best_delta())));
            }
            rows.push(GridRow {
                decile,
                k,
                n_events,
                p_improve: summarize(&p),
                e_delta_best: summarize(&e),
            });
        }
    }
    (rows, warnings)
}
