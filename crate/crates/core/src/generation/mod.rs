//! Multi-candidate generation: prompt construction, backends, response parsing,
//! and the per-round re-query policy.

mod backend;
mod mock;
mod parse;
mod prompt;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{ArchiveError, Island, Program};
use crate::evaluation::BudgetLedger;

pub use backend::{
    estimate_tokens, prompt_hash, read_transcript, BackendError, Completion, CompletionRequest,
    GeneratorBackend, RecordingBackend, ScriptedBackend, TranscriptRecord,
};
pub use mock::{mock_mutation_response, MockBackend, MIN_RADIUS};
pub use parse::{
    parse_vs_response, strip_code_fences, ParseFailure, ParseWarning, ParsedResponse, VsCandidate,
    PROBABILITY_SUM_TOLERANCE,
};
pub use prompt::{
    build_vs_prompt, extract_parent, render_template, VsPrompt, SYSTEM_PROMPT, VS_TEMPLATE,
};
#[cfg(test)]
pub(crate) use remote::tests::stub_server as remote_stub_server;
pub(crate) use remote::JsonClient;
pub use remote::{RemoteBackend, RemoteConfig};

fn default_n_inspirations() -> usize {
    3
}

fn default_min_candidates() -> usize {
    2
}

fn default_max_requeries() -> u32 {
    1
}

fn default_rank_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default = "default_n_inspirations")]
    pub n_inspirations: usize,
    /// A round whose parse yields fewer than `min(k, min_candidates)` is re-queried.
    #[serde(default = "default_min_candidates")]
    pub min_candidates: usize,
    #[serde(default = "default_max_requeries")]
    pub max_requeries: u32,
    /// Softmax temperature over normalized score ranks for parent and inspiration sampling.
    #[serde(default = "default_rank_weight")]
    pub rank_weight: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_inspirations: default_n_inspirations(),
            min_candidates: default_min_candidates(),
            max_requeries: default_max_requeries(),
            rank_weight: default_rank_weight(),
        }
    }
}

impl GenerationConfig {
    pub fn threshold(&self, k: usize) -> usize {
        k.min(self.min_candidates)
    }
}

/// Task-level text that goes into every prompt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskPrompt {
    pub description: String,
    pub feature_names: Vec<String>,
}

/// Accounting for one backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call_index: u32,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub parsed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_failure: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub parent: Program,
    pub inspirations: Vec<Program>,
    pub k: usize,
    /// Kept candidates, ranks contiguous from 1, never more than `k`.
    pub candidates: Vec<VsCandidate>,
    pub calls: Vec<CallRecord>,
    /// Set when the backend stayed unreachable; the round then carries no candidates.
    pub backend_failure: Option<String>,
    /// Every completed call, ready to append to a transcript.
    pub transcript: Vec<TranscriptRecord>,
}

impl RoundOutput {
    pub fn requery_count(&self) -> u32 {
        self.calls.len().saturating_sub(1) as u32
    }

    pub fn input_tokens(&self) -> u64 {
        self.calls.iter().map(|c| c.input_tokens).sum()
    }

    pub fn output_tokens(&self) -> u64 {
        self.calls.iter().map(|c| c.output_tokens).sum()
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Runs one generation round on `island`: samples the parent and inspirations,
/// queries the backend, and re-queries with the identical prompt while the
/// parse stays below threshold. Every call is charged to `ledger`.
///
/// When a re-query happens, the response with the most parsed candidates is
/// kept (the earliest on ties). A transient backend failure ends the round
/// with no candidates; any other backend error is returned.
pub fn generate_round(
    island: &mut Island,
    k: usize,
    backend: &dyn GeneratorBackend,
    ledger: &BudgetLedger,
    task: &TaskPrompt,
    cfg: &GenerationConfig,
) -> Result<RoundOutput, GenerationError> {
    let parent = island.sample_parent(cfg.rank_weight)?;
    let inspirations =
        island.sample_inspirations(cfg.n_inspirations, Some(&parent.id), cfg.rank_weight);
    let prompt = build_vs_prompt(
        &parent,
        &inspirations,
        k,
        &task.description,
        &task.feature_names,
    );
    let threshold = cfg.threshold(k);

    let mut out = RoundOutput {
        parent,
        inspirations,
        k,
        candidates: Vec::new(),
        calls: Vec::new(),
        backend_failure: None,
        transcript: Vec::new(),
    };
    let hash = prompt_hash(&prompt);
    for call_index in 0..=cfg.max_requeries {
        let request = CompletionRequest {
            prompt: &prompt,
            island_id: island.id,
            iteration: island.iteration,
            call_index,
            k,
        };
        let completion = match backend.complete(&request) {
            Ok(c) => c,
            Err(e) if e.is_transient() => {
                log::warn!("island {} iteration {}: {e}", island.id, island.iteration);
                out.backend_failure = Some(e.to_string());
                out.candidates.clear();
                break;
            }
            Err(e) => return Err(e.into()),
        };
        ledger.charge_call(completion.input_tokens, completion.output_tokens);
        out.transcript.push(TranscriptRecord {
            island_id: island.id,
            iteration: island.iteration,
            call_index,
            prompt_hash: hash.clone(),
            response_text: completion.response_text.clone(),
            input_tokens: completion.input_tokens,
            output_tokens: completion.output_tokens,
        });
        let mut record = CallRecord {
            call_index,
            input_tokens: completion.input_tokens,
            output_tokens: completion.output_tokens,
            parsed: 0,
            parse_failure: None,
            warnings: Vec::new(),
        };
        match parse_vs_response(&completion.response_text, k) {
            Ok(parsed) => {
                record.parsed = parsed.candidates.len();
                record.warnings = parsed.warnings;
                if parsed.candidates.len() > out.candidates.len() {
                    out.candidates = parsed.candidates;
                }
            }
            Err(e) => record.parse_failure = Some(e.to_string()),
        }
        out.calls.push(record);
        if out.candidates.len() >= threshold {
            break;
        }
    }
    Ok(out)
}
