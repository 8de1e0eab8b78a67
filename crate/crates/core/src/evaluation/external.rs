//! Evaluation through an external executable.
//!
//! The program body is written to a file in a private temporary directory and
//! the command is invoked as `command [args...] <file>`. The evaluator must
//! print one JSON record to stdout (the last non-empty line is read):
//!
//! ```text
//! {"valid": true, "score": 1.0, "features": [0.5], "failure": null}
//! ```
//!
//! The child runs in its own process group so that on timeout the whole tree
//! can be killed.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{EvalError, EvaluationResult, Evaluator, FailureKind};
use crate::archive::{Dim, Direction};

const POLL_INTERVAL: Duration = Duration::from_millis(5);
const DIAGNOSTIC_LIMIT: usize = 2000;

#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub command: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub direction: Direction,
    pub feature_names: Vec<String>,
    pub feature_bounds: Vec<(f64, f64)>,
    pub initial_program: String,
    pub description: String,
    /// File name the candidate is written to inside the temp directory.
    pub file_name: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalRecord {
    valid: bool,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    features: Option<Vec<f64>>,
    #[serde(default)]
    failure: Option<FailureKind>,
}

fn truncate(s: &str) -> String {
    if s.len() <= DIAGNOSTIC_LIMIT {
        return s.to_string();
    }
    let mut end = DIAGNOSTIC_LIMIT;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

fn spawn_reader(stream: Option<impl Read + Send + 'static>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: plain syscall on a process group we created; failure is harmless.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

impl ExternalEvaluator {
    pub fn new(command: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
            args: Vec::new(),
            timeout: Duration::from_secs(30),
            direction: Direction::Maximize,
            feature_names: Vec::new(),
            feature_bounds: Vec::new(),
            initial_program: String::new(),
            description: String::new(),
            file_name: "candidate.txt".into(),
        }
    }

    /// Checks the command exists and is executable.
    pub fn check_available(&self) -> Result<(), EvalError> {
        use std::os::unix::fs::PermissionsExt;
        let resolved = if self.command.components().count() > 1 {
            Some(self.command.clone())
        } else {
            std::env::var_os("PATH").and_then(|paths| {
                std::env::split_paths(&paths)
                    .map(|p| p.join(&self.command))
                    .find(|p| p.is_file())
            })
        };
        let path = resolved.ok_or_else(|| {
            EvalError::Unavailable(format!("{} not found", self.command.display()))
        })?;
        let meta = std::fs::metadata(&path)
            .map_err(|e| EvalError::Unavailable(format!("{}: {e}", path.display())))?;
        if meta.permissions().mode() & 0o111 == 0 {
            return Err(EvalError::Unavailable(format!(
                "{} is not executable",
                path.display()
            )));
        }
        Ok(())
    }

    fn interpret(&self, stdout: &str) -> EvaluationResult {
        let line = stdout
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("");
        let record: ExternalRecord = match serde_json::from_str(line.trim()) {
            Ok(r) => r,
            Err(e) => {
                return EvaluationResult::failure(
                    FailureKind::RuntimeError,
                    format!("malformed evaluator output ({e}): {}", truncate(stdout)),
                )
            }
        };
        if !record.valid {
            let kind = record.failure.unwrap_or(FailureKind::ConstraintViolation);
            return EvaluationResult::failure(
                kind,
                format!("evaluator reported invalid: {}", truncate(line)),
            );
        }
        match (record.score, record.features) {
            (Some(score), Some(features))
                if score.is_finite()
                    && features.iter().all(|f| f.is_finite())
                    && (self.feature_names.is_empty()
                        || features.len() == self.feature_names.len()) =>
            {
                EvaluationResult::success(score, features)
            }
            _ => EvaluationResult::failure(
                FailureKind::RuntimeError,
                format!(
                    "valid record lacks a finite score or matching features: {}",
                    truncate(stdout)
                ),
            ),
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn name(&self) -> &str {
        "external"
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn feature_names(&self) -> Vec<String> {
        self.feature_names.clone()
    }

    fn feature_dims(&self, bins: usize) -> Vec<Dim> {
        self.feature_bounds
            .iter()
            .map(|&(lo, hi)| Dim::new(lo, hi, bins))
            .collect()
    }

    fn initial_program(&self) -> String {
        self.initial_program.clone()
    }

    fn description(&self) -> String {
        self.description.clone()
    }

    fn evaluate(&self, body: &str) -> EvaluationResult {
        let dir = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => {
                return EvaluationResult::failure(
                    FailureKind::RuntimeError,
                    format!("tempdir: {e}"),
                )
            }
        };
        let file = dir.path().join(&self.file_name);
        if let Err(e) = std::fs::write(&file, body) {
            return EvaluationResult::failure(
                FailureKind::RuntimeError,
                format!("write candidate: {e}"),
            );
        }
        let spawned = Command::new(&self.command)
            .args(&self.args)
            .arg(&file)
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn();
        let mut child = match spawned {
            Ok(c) => c,
            Err(e) => {
                return EvaluationResult::failure(
                    FailureKind::RuntimeError,
                    format!("spawn {}: {e}", self.command.display()),
                )
            }
        };
        let out = spawn_reader(child.stdout.take());
        let err = spawn_reader(child.stderr.take());

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    kill_group(&mut child);
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => thread::sleep(POLL_INTERVAL),
                Err(e) => {
                    kill_group(&mut child);
                    let _ = child.wait();
                    return EvaluationResult::failure(
                        FailureKind::RuntimeError,
                        format!("wait: {e}"),
                    );
                }
            }
        };
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();

        match status {
            None => EvaluationResult::failure(
                FailureKind::Timeout,
                format!("killed after {:?}", self.timeout),
            ),
            Some(s) if !s.success() => EvaluationResult::failure(
                FailureKind::RuntimeError,
                format!("exit status {s}; stderr: {}", truncate(&stderr)),
            ),
            Some(_) => self.interpret(&stdout),
        }
    }
}
