use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{EvaluationResult, FailureKind};

/// Token prices in currency units per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prices {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BudgetLimits {
    pub max_evals: Option<u64>,
    pub max_cost: Option<f64>,
}

/// API cost of a token count under `prices`.
///
/// All cost figures in the crate go through this function so that a cost
/// recomputed from logged token totals matches the ledger exactly.
pub fn cost_of(prices: &Prices, input_tokens: u64, output_tokens: u64) -> f64 {
    input_tokens as f64 * prices.input_per_million / 1e6
        + output_tokens as f64 * prices.output_per_million / 1e6
}

/// Evaluation-count and API-cost accounting. Safe for concurrent use.
#[derive(Debug, Default)]
pub struct BudgetLedger {
    prices: Prices,
    limits: BudgetLimits,
    n_eval: AtomicU64,
    successes: AtomicU64,
    failures: [AtomicU64; 4],
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
    calls: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailureCounts {
    pub parse_error: u64,
    pub runtime_error: u64,
    pub timeout: u64,
    pub constraint_violation: u64,
}

impl FailureCounts {
    pub fn total(&self) -> u64 {
        self.parse_error + self.runtime_error + self.timeout + self.constraint_violation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub n_eval: u64,
    pub successes: u64,
    pub failures: FailureCounts,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
    pub api_cost: f64,
}

impl BudgetLedger {
    pub fn new(prices: Prices, limits: BudgetLimits) -> Self {
        Self {
            prices,
            limits,
            ..Self::default()
        }
    }

    /// An uncapped ledger with the same prices, used to account a single round.
    pub fn scratch(&self) -> Self {
        Self::new(self.prices, BudgetLimits::default())
    }

    pub fn prices(&self) -> &Prices {
        &self.prices
    }

    pub fn limits(&self) -> &BudgetLimits {
        &self.limits
    }

    pub fn n_eval(&self) -> u64 {
        self.n_eval.load(Ordering::SeqCst)
    }

    pub fn input_tokens(&self) -> u64 {
        self.input_tokens.load(Ordering::SeqCst)
    }

    pub fn output_tokens(&self) -> u64 {
        self.output_tokens.load(Ordering::SeqCst)
    }

    pub fn api_cost(&self) -> f64 {
        cost_of(&self.prices, self.input_tokens(), self.output_tokens())
    }

    pub(crate) fn record_entry(&self) {
        self.n_eval.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn record_outcome(&self, result: &EvaluationResult) {
        match result.failure {
            None => self.successes.fetch_add(1, Ordering::SeqCst),
            Some(kind) => self.failures[kind.slot()].fetch_add(1, Ordering::SeqCst),
        };
    }

    /// Charges one generator call.
    pub fn charge_call(&self, input_tokens: u64, output_tokens: u64) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.input_tokens.fetch_add(input_tokens, Ordering::SeqCst);
        self.output_tokens
            .fetch_add(output_tokens, Ordering::SeqCst);
    }

    /// The cap that has been reached, if any.
    pub fn exhaustion(&self) -> Option<String> {
        if let Some(max) = self.limits.max_evals {
            if self.n_eval() >= max {
                return Some(format!("max_evals {max} reached"));
            }
        }
        if let Some(max) = self.limits.max_cost {
            if self.api_cost() >= max {
                return Some(format!("max_cost {max} reached"));
            }
        }
        None
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhaustion().is_some()
    }

    /// Adds every counter of `other` into this ledger.
    pub fn absorb(&self, other: &BudgetLedger) {
        let add = |dst: &AtomicU64, src: &AtomicU64| {
            dst.fetch_add(src.load(Ordering::SeqCst), Ordering::SeqCst);
        };
        add(&self.n_eval, &other.n_eval);
        add(&self.successes, &other.successes);
        for (d, s) in self.failures.iter().zip(&other.failures) {
            add(d, s);
        }
        add(&self.input_tokens, &other.input_tokens);
        add(&self.output_tokens, &other.output_tokens);
        add(&self.calls, &other.calls);
    }

    pub fn totals(&self) -> LedgerTotals {
        let f = |k: FailureKind| self.failures[k.slot()].load(Ordering::SeqCst);
        LedgerTotals {
            n_eval: self.n_eval(),
            successes: self.successes.load(Ordering::SeqCst),
            failures: FailureCounts {
                parse_error: f(FailureKind::ParseError),
                runtime_error: f(FailureKind::RuntimeError),
                timeout: f(FailureKind::Timeout),
                constraint_violation: f(FailureKind::ConstraintViolation),
            },
            input_tokens: self.input_tokens(),
            output_tokens: self.output_tokens(),
            calls: self.calls.load(Ordering::SeqCst),
            api_cost: self.api_cost(),
        }
    }
}
