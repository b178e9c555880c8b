//! Remote-model transport for completion, scoring, and embedding
//! backends, plus the scripted mock used throughout the tests.
//!
//! One transport serves every remote role so auth, retries, and rate
//! limiting live in a single place. Each role (simulator, rewriter,
//! summarizer, reranker scorer, question embedder) gets its own
//! endpoint configuration.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Completion sampling parameters sent with every generation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            max_tokens: 50,
            temperature: 0.5,
            frequency_penalty: 0.2,
            presence_penalty: 0.5,
        }
    }
}

/// Completion, scoring, and embedding over one backend.
///
/// Implementations must be safe for concurrent calls.
pub trait ModelClient: Send + Sync {
    /// Generates text for a prompt; the result is whitespace-trimmed.
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String>;

    /// Returns a finite relevance score for a prompt.
    fn score(&self, prompt: &str) -> Result<f64>;

    /// Returns a fixed-length embedding vector for a text.
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Remote endpoint settings for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    /// Dot path to the completion text in the response JSON.
    pub text_path: String,
    /// Dot path to the score value in the response JSON.
    pub score_path: String,
    /// Dot path to the embedding array in the response JSON.
    pub embedding_path: String,
    /// Environment variable holding the bearer token; `None` disables auth.
    pub token_env: Option<String>,
    pub timeout_secs: u64,
    /// Total attempts per request (first try plus retries).
    pub attempts: u32,
    /// Initial retry backoff; doubles after each failed attempt.
    pub backoff_initial_ms: u64,
    pub max_in_flight: usize,
    /// Optional request budget per 60-second window.
    pub per_minute_budget: Option<u32>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            text_path: "choices.0.text".into(),
            score_path: "score".into(),
            embedding_path: "embedding".into(),
            token_env: Some("CONVSEARCH_API_TOKEN".into()),
            timeout_secs: 30,
            attempts: 3,
            backoff_initial_ms: 1000,
            max_in_flight: 4,
            per_minute_budget: None,
        }
    }
}

/// Walks a JSON value by a dot-separated path; numeric segments index
/// into arrays.
pub fn resolve_json_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    let mut current = value;
    for segment in path.split('.') {
        current = match segment.parse::<usize>() {
            Ok(idx) => current.get(idx)?,
            Err(_) => current.get(segment)?,
        };
    }
    Some(current)
}

#[derive(Debug)]
struct LimiterState {
    in_flight: usize,
    window_start: Instant,
    used_in_window: u32,
}

/// Blocking limiter enforcing max-in-flight and per-minute budgets.
#[derive(Debug)]
struct RateLimiter {
    max_in_flight: usize,
    per_minute: Option<u32>,
    state: Mutex<LimiterState>,
    available: Condvar,
}

impl RateLimiter {
    fn new(max_in_flight: usize, per_minute: Option<u32>) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            per_minute,
            state: Mutex::new(LimiterState {
                in_flight: 0,
                window_start: Instant::now(),
                used_in_window: 0,
            }),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut state = self.state.lock().expect("limiter lock");
        loop {
            if state.window_start.elapsed() >= Duration::from_secs(60) {
                state.window_start = Instant::now();
                state.used_in_window = 0;
            }
            let budget_ok = self
                .per_minute
                .is_none_or(|budget| state.used_in_window < budget);
            if state.in_flight < self.max_in_flight && budget_ok {
                state.in_flight += 1;
                state.used_in_window += 1;
                return;
            }
            let wait = if budget_ok {
                Duration::from_millis(50)
            } else {
                Duration::from_secs(60).saturating_sub(state.window_start.elapsed())
            };
            let (guard, _) = self
                .available
                .wait_timeout(state, wait.max(Duration::from_millis(1)))
                .expect("limiter lock");
            state = guard;
        }
    }

    fn release(&self) {
        let mut state = self.state.lock().expect("limiter lock");
        state.in_flight = state.in_flight.saturating_sub(1);
        drop(state);
        self.available.notify_all();
    }
}

/// HTTP client for one remote endpoint, with retries, auth, and rate
/// limiting. Requests are JSON POSTs; response fields are read via the
/// configured dot paths.
#[derive(Debug)]
pub struct RemoteClient {
    config: RemoteConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
    limiter: RateLimiter,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.url.is_empty() {
            return Err(Error::Config("remote endpoint url is empty".into()));
        }
        let token = match &config.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("auth token environment variable {var} is not set"))
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let limiter = RateLimiter::new(config.max_in_flight, config.per_minute_budget);
        Ok(Self {
            config,
            token,
            http,
            limiter,
        })
    }

    /// Posts `body`, retrying with exponential backoff, and returns the
    /// parsed response JSON.
    fn post(&self, body: &Value) -> Result<Value> {
        self.limiter.acquire();
        let result = self.post_inner(body);
        self.limiter.release();
        result
    }

    fn post_inner(&self, body: &Value) -> Result<Value> {
        let attempts = self.config.attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.backoff_initial_ms);
        let mut last_status = 0u16;
        for attempt in 1..=attempts {
            let started = Instant::now();
            let mut request = self.http.post(&self.config.url).json(body);
            if let Some(token) = &self.token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    log::debug!(
                        "POST {} -> {} in {:?} (attempt {attempt})",
                        self.config.url,
                        status,
                        started.elapsed()
                    );
                    if status.is_success() {
                        return response
                            .json::<Value>()
                            .map_err(|e| Error::Data(format!("response body: {e}")));
                    }
                    last_status = status.as_u16();
                }
                Err(e) if e.is_timeout() => {
                    return Err(Error::Timeout(Duration::from_secs(
                        self.config.timeout_secs,
                    )));
                }
                Err(e) => {
                    log::debug!("POST {} transport error: {e}", self.config.url);
                    last_status = 0;
                }
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(Error::Remote {
            status: last_status,
            attempts,
        })
    }

    fn extract<'a>(&self, response: &'a Value, path: &str) -> Result<&'a Value> {
        resolve_json_path(response, path)
            .ok_or_else(|| Error::Data(format!("response field {path} missing in {response}")))
    }
}

impl ModelClient for RemoteClient {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String> {
        let body = json!({
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
        });
        let response = self.post(&body)?;
        let text = self.extract(&response, &self.config.text_path)?;
        let text = text
            .as_str()
            .ok_or_else(|| Error::Data(format!("completion field is not a string: {text}")))?;
        Ok(text.trim().to_string())
    }

    fn score(&self, prompt: &str) -> Result<f64> {
        let response = self.post(&json!({ "prompt": prompt }))?;
        let value = self.extract(&response, &self.config.score_path)?;
        let score = value
            .as_f64()
            .ok_or_else(|| Error::Data(format!("score field is not a number: {value}")))?;
        if !score.is_finite() {
            return Err(Error::Data(format!("score is not finite: {score}")));
        }
        Ok(score)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let response = self.post(&json!({ "text": text }))?;
        let value = self.extract(&response, &self.config.embedding_path)?;
        serde_json::from_value(value.clone())
            .map_err(|e| Error::Data(format!("embedding field: {e}")))
    }
}

/// Scripted client: responses are consumed sequentially from a list,
/// regardless of which operation is called. Exhaustion is an error so
/// tests notice unexpected extra calls.
#[derive(Debug)]
pub struct MockClient {
    responses: Mutex<VecDeque<String>>,
    calls: Mutex<u32>,
}

impl MockClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            calls: Mutex::new(0),
        }
    }

    /// Loads a script: one JSON string per line.
    pub fn from_script(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path)?;
        let mut responses = VecDeque::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let text: String = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected a JSON string: {e}"),
            })?;
            responses.push_back(text);
        }
        Ok(Self {
            responses: Mutex::new(responses),
            calls: Mutex::new(0),
        })
    }

    fn next(&self) -> Result<String> {
        let mut calls = self.calls.lock().expect("mock lock");
        *calls += 1;
        drop(calls);
        self.responses
            .lock()
            .expect("mock lock")
            .pop_front()
            .ok_or(Error::MockExhausted)
    }

    /// Number of calls made so far, across all operations.
    pub fn calls(&self) -> u32 {
        *self.calls.lock().expect("mock lock")
    }

    /// Number of scripted responses not yet consumed.
    pub fn remaining(&self) -> usize {
        self.responses.lock().expect("mock lock").len()
    }
}

impl ModelClient for MockClient {
    fn complete(&self, _prompt: &str, _params: &CompletionParams) -> Result<String> {
        Ok(self.next()?.trim().to_string())
    }

    fn score(&self, _prompt: &str) -> Result<f64> {
        let raw = self.next()?;
        raw.trim()
            .parse::<f64>()
            .map_err(|e| Error::Data(format!("mock score {raw:?}: {e}")))
    }

    fn embed(&self, _text: &str) -> Result<Vec<f64>> {
        let raw = self.next()?;
        serde_json::from_str(&raw).map_err(|e| Error::Data(format!("mock embedding {raw:?}: {e}")))
    }
}
