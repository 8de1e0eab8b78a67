use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub island_id: usize,
    pub iteration: u64,
    /// 0 for the first call of a round, incremented per re-query.
    pub call_index: u32,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transport failure that survived every retry; the round is abandoned.
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    /// A replay diverged from its transcript; continuing would be meaningless.
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether the run can continue after this error.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}

/// Anything that turns a prompt into a response. Implementations are shared
/// across island loops and must tolerate concurrent calls.
pub trait GeneratorBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError>;
}

impl<B: GeneratorBackend + ?Sized> GeneratorBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Rough token estimate used by offline backends (4 bytes per token, rounded up).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub island_id: usize,
    pub iteration: u64,
    pub call_index: u32,
    pub prompt_hash: String,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

type CallKey = (usize, u64, u32);

/// Replays responses from a transcript, matched by `(island, iteration, call)`.
#[derive(Debug)]
pub struct ScriptedBackend {
    records: HashMap<CallKey, TranscriptRecord>,
    check_prompts: bool,
}

impl ScriptedBackend {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| ((r.island_id, r.iteration, r.call_index), r))
                .collect(),
            check_prompts: true,
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_records(read_transcript(path)?))
    }

    /// Disables the prompt-hash check, for transcripts edited by hand.
    pub fn lenient(mut self) -> Self {
        self.check_prompts = false;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl GeneratorBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let key = (req.island_id, req.iteration, req.call_index);
        let rec = self.records.get(&key).ok_or_else(|| {
            BackendError::Transcript(format!(
                "no entry for island {} iteration {} call {}",
                key.0, key.1, key.2
            ))
        })?;
        if self.check_prompts && rec.prompt_hash != prompt_hash(req.prompt) {
            return Err(BackendError::Transcript(format!(
                "prompt mismatch at island {} iteration {} call {}",
                key.0, key.1, key.2
            )));
        }
        Ok(Completion {
            response_text: rec.response_text.clone(),
            input_tokens: rec.input_tokens,
            output_tokens: rec.output_tokens,
        })
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, BackendError> {
    let file = File::open(path)
        .map_err(|e| BackendError::Transcript(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BackendError::Transcript(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| {
                BackendError::Transcript(format!("{}:{}: {e}", path.display(), i + 1))
            })?,
        );
    }
    Ok(out)
}

/// Wraps a backend and appends every successful call to a transcript file.
pub struct RecordingBackend<B> {
    inner: B,
    sink: Mutex<BufWriter<File>>,
}

impl<B: GeneratorBackend> RecordingBackend<B> {
    pub fn create(inner: B, path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            inner,
            sink: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }
}

impl<B: GeneratorBackend> GeneratorBackend for RecordingBackend<B> {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let completion = self.inner.complete(req)?;
        let record = TranscriptRecord {
            island_id: req.island_id,
            iteration: req.iteration,
            call_index: req.call_index,
            prompt_hash: prompt_hash(req.prompt),
            response_text: completion.response_text.clone(),
            input_tokens: completion.input_tokens,
            output_tokens: completion.output_tokens,
        };
        let mut sink = self.sink.lock().expect("transcript lock");
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(sink, "{line}")
            .and_then(|_| sink.flush())
            .map_err(|e| BackendError::Transcript(format!("write transcript: {e}")))?;
        Ok(completion)
    }
}
