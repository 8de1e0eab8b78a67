//! OpenAI-compatible chat-completion client.
//!
//! Requests are blocking. A shared counter caps the number of calls in flight
//! across islands, and transport errors, 429s and 5xx responses are retried
//! with exponential backoff.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{
    estimate_tokens, BackendError, Completion, CompletionRequest, GeneratorBackend,
};
use super::prompt::SYSTEM_PROMPT;

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_in_flight() -> usize {
    4
}

fn default_retries() -> u32 {
    4
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u64>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            temperature: default_temperature(),
            max_tokens: None,
            max_in_flight: default_max_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            used: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// JSON-over-HTTP POST with bounded concurrency and retries.
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    in_flight: InFlight,
    retries: u32,
    backoff: Duration,
}

impl JsonClient {
    pub(crate) fn new(
        api_key: Option<String>,
        max_in_flight: usize,
        retries: u32,
        backoff: Duration,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            api_key,
            in_flight: InFlight::new(max_in_flight),
            retries,
            backoff,
        }
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, (bool, String)> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| (true, format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, format!("read body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}: {}", preview(&text))));
        }
        if !(200..300).contains(&status) {
            return Err((false, format!("HTTP {status}: {}", preview(&text))));
        }
        serde_json::from_str(&text).map_err(|e| {
            (
                false,
                format!("response is not JSON ({e}): {}", preview(&text)),
            )
        })
    }

    /// Posts `body` and returns the decoded JSON response. Gives up after the
    /// configured retries or on the first non-retryable status.
    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let _permit = self.in_flight.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(url, body) {
                Ok(v) => return Ok(v),
                Err((retryable, reason)) => {
                    if !retryable || attempts > self.retries {
                        return Err(BackendError::Unavailable { attempts, reason });
                    }
                    let wait = self.backoff * 2u32.saturating_pow(attempts - 1);
                    log::warn!("request to {url} failed ({reason}); retrying in {wait:?}");
                    thread::sleep(wait);
                }
            }
        }
    }
}

fn preview(text: &str) -> String {
    text.chars().take(200).collect()
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: JsonClient,
}

impl RemoteBackend {
    /// Reads the API key from the configured environment variable. A missing
    /// key is an error unless the endpoint is local.
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env).ok();
        let local =
            config.endpoint.contains("://127.0.0.1") || config.endpoint.contains("://localhost");
        if api_key.is_none() && !local {
            return Err(BackendError::Config(format!(
                "environment variable {} is not set",
                config.api_key_env
            )));
        }
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: RemoteConfig, api_key: Option<String>) -> Self {
        let client = JsonClient::new(
            api_key,
            config.max_in_flight,
            config.retries,
            Duration::from_millis(config.backoff_ms),
            Duration::from_secs(config.timeout_secs),
        );
        Self { config, client }
    }

    fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
        });
        if let Some(max) = self.config.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }
}

impl GeneratorBackend for RemoteBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let response = self
            .client
            .post(&self.config.endpoint, &self.request_body(req.prompt))?;
        let text = response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let usage = |field: &str| {
            response
                .pointer(&format!("/usage/{field}"))
                .and_then(Value::as_u64)
        };
        Ok(Completion {
            input_tokens: usage("prompt_tokens")
                .unwrap_or_else(|| estimate_tokens(SYSTEM_PROMPT) + estimate_tokens(req.prompt)),
            output_tokens: usage("completion_tokens").unwrap_or_else(|| estimate_tokens(&text)),
            response_text: text,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves canned `(status, body)` replies in order, one per connection,
    /// and returns the endpoint URL plus a counter of requests seen.
    pub(crate) fn stub_server(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let seen = Arc::new(AtomicUsize::new(0));
        let counter = seen.clone();
        thread::spawn(move || {
            for (status, body) in replies {
                let Ok((stream, _)) = listener.accept() else {
                    return;
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut buf = vec![0; len];
                let _ = reader.read_exact(&mut buf);
                counter.fetch_add(1, Ordering::SeqCst);
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (url, seen)
    }

    fn backend(url: String) -> RemoteBackend {
        let mut cfg = RemoteConfig::new(url, "test-model");
        cfg.backoff_ms = 1;
        cfg.retries = 2;
        cfg.timeout_secs = 5;
        RemoteBackend::with_key(cfg, Some("k".into()))
    }

    fn req(prompt: &str) -> CompletionRequest<'_> {
        CompletionRequest {
            prompt,
            island_id: 0,
            iteration: 0,
            call_index: 0,
            k: 3,
        }
    }

    #[test]
    fn parses_content_and_usage() {
        let ok = r#"{"choices":[{"message":{"content":"{\"responses\":[]}"}}],"usage":{"prompt_tokens":11,"completion_tokens":7}}"#;
        let (url, seen) = stub_server(vec![(200, ok.into())]);
        let c = backend(url).complete(&req("hi")).unwrap();
        assert_eq!(c.response_text, r#"{"responses":[]}"#);
        assert_eq!((c.input_tokens, c.output_tokens), (11, 7));
        assert_eq!(seen.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"content":"x"}}]}"#;
        let (url, seen) = stub_server(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, ok.into()),
        ]);
        let c = backend(url).complete(&req("hello")).unwrap();
        assert_eq!(c.response_text, "x");
        assert_eq!(c.output_tokens, 1);
        assert_eq!(seen.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, seen) = stub_server(vec![(500, "{}".into()); 3]);
        let err = backend(url).complete(&req("p")).unwrap_err();
        assert!(
            matches!(err, BackendError::Unavailable { attempts: 3, .. }),
            "{err}"
        );
        assert!(err.is_transient());
        assert_eq!(seen.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = stub_server(vec![(401, r#"{"error":"bad key"}"#.into())]);
        let err = backend(url).complete(&req("p")).unwrap_err();
        assert!(matches!(err, BackendError::Unavailable { attempts: 1, .. }));
        assert_eq!(seen.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn missing_key_for_remote_endpoint_is_config_error() {
        let mut cfg = RemoteConfig::new("https://example.invalid/v1/chat/completions", "m");
        cfg.api_key_env = "ARCHIPELAGO_TEST_UNSET_KEY".into();
        assert!(matches!(
            RemoteBackend::new(cfg),
            Err(BackendError::Config(_))
        ));
    }
}
