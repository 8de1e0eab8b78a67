//! Per-island adaptive candidate count.
//!
//! Each island keeps its own `k`, the number of candidates requested per
//! generator call. Iterations are grouped into windows of `window_len`; at the
//! end of a window the number of iterations that changed the island's archive
//! decides the next `k`:
//!
//! * no update in the whole window: `k` grows by `delta` (capped at the largest allowed value)
//! * an update in every iteration: `k` shrinks by `delta` (floored at the smallest allowed value)
//! * anything else: `k` is kept
//!
//! The first `warmup` iterations of an island run at `k_init` and do not feed
//! any window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerConfigError {
    #[error("k_set must not be empty")]
    EmptySet,
    #[error("k_set values must be positive")]
    NonPositive,
    #[error("k_init {0} is not a member of k_set")]
    InitNotInSet(u32),
    #[error("window_len must be positive")]
    EmptyWindow,
    #[error("k_set is not closed under steps of {delta}: {k} -> {next}")]
    NotClosed { delta: u32, k: u32, next: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Allowed candidate counts.
    pub k_set: Vec<u32>,
    /// Step applied at a window boundary.
    pub delta: u32,
    /// Iterations per statistics window.
    pub window_len: u32,
    /// Candidate count used during warmup.
    pub k_init: u32,
    /// Number of initial iterations that hold `k_init` and skip window statistics.
    pub warmup: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            k_set: vec![1, 3, 5, 7],
            delta: 2,
            window_len: 3,
            k_init: 5,
            warmup: 3,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerConfigError> {
        if self.k_set.is_empty() {
            return Err(SchedulerConfigError::EmptySet);
        }
        if self.k_set.contains(&0) {
            return Err(SchedulerConfigError::NonPositive);
        }
        if !self.k_set.contains(&self.k_init) {
            return Err(SchedulerConfigError::InitNotInSet(self.k_init));
        }
        if self.window_len == 0 {
            return Err(SchedulerConfigError::EmptyWindow);
        }
        for &k in &self.k_set {
            for c in [0, self.window_len] {
                let next = self.update_k(k, c);
                if !self.k_set.contains(&next) {
                    return Err(SchedulerConfigError::NotClosed {
                        delta: self.delta,
                        k,
                        next,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn k_min(&self) -> u32 {
        self.k_set.iter().copied().min().unwrap_or(1)
    }

    pub fn k_max(&self) -> u32 {
        self.k_set.iter().copied().max().unwrap_or(1)
    }

    /// Window-boundary update rule for a window that saw `c` archive updates.
    pub fn update_k(&self, k: u32, c: u32) -> u32 {
        if c == 0 {
            (k + self.delta).min(self.k_max())
        } else if c >= self.window_len {
            k.saturating_sub(self.delta).max(self.k_min())
        } else {
            k
        }
    }
}

/// A `k` change (or confirmation) logged at every window boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KTransition {
    pub c: u32,
    pub k_before: u32,
    pub k_after: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub k: u32,
    pub window_pos: u32,
    pub window_updates: u32,
    pub warmup_remaining: u32,
    config: SchedulerConfig,
}

impl SchedulerState {
    pub fn new(config: &SchedulerConfig) -> Self {
        Self {
            k: config.k_init,
            window_pos: 0,
            window_updates: 0,
            warmup_remaining: config.warmup,
            config: config.clone(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn window_len(&self) -> u32 {
        self.config.window_len
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_remaining > 0
    }

    /// Feeds one finished island iteration into the scheduler.
    ///
    /// Must be called once per iteration, after every insertion of that
    /// iteration's round. Returns the transition when a window closes.
    pub fn record_iteration(&mut self, any_replacement: bool) -> Option<KTransition> {
        if self.warmup_remaining > 0 {
            self.warmup_remaining -= 1;
            return None;
        }
        self.window_pos += 1;
        if any_replacement {
            self.window_updates += 1;
        }
        if self.window_pos < self.config.window_len {
            return None;
        }
        let k_before = self.k;
        let c = self.window_updates;
        self.k = self.config.update_k(k_before, c);
        self.window_pos = 0;
        self.window_updates = 0;
        Some(KTransition {
            c,
            k_before,
            k_after: self.k,
        })
    }
}
