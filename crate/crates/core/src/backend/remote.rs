//! Client for OpenAI-compatible `/completions` and `/embeddings` endpoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_context, estimate_tokens, Backend, BackendKind, GenRequest, OptionScoreRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub timeout_s: f64,
    /// Total attempts per request on transport failure.
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub context_limit_tokens: Option<usize>,
    /// Environment variable holding the bearer token. Unset variable means no auth header.
    pub api_key_env: String,
    /// Whether the server returns token logprobs with `echo`.
    pub supports_logprobs: bool,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
    pub embedding_model: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "google/flan-t5-xl".into(),
            timeout_s: 60.0,
            max_retries: 3,
            max_concurrency: 8,
            context_limit_tokens: None,
            api_key_env: "OPENAI_API_KEY".into(),
            supports_logprobs: true,
            backoff_ms: 500,
            embedding_model: None,
        }
    }
}

impl RemoteConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            v.push(format!("backend.remote.base_url `{}` is not an http(s) URL", self.base_url));
        }
        if self.model.trim().is_empty() {
            v.push("backend.remote.model must not be empty".into());
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            v.push("backend.remote.timeout_s must be positive".into());
        }
        if self.max_retries == 0 {
            v.push("backend.remote.max_retries must be at least 1".into());
        }
        if self.max_concurrency == 0 {
            v.push("backend.remote.max_concurrency must be at least 1".into());
        }
        if self.context_limit_tokens == Some(0) {
            v.push("backend.remote.context_limit_tokens must be positive".into());
        }
        v
    }
}

/// Counting semaphore bounding in-flight requests.
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

struct Http {
    config: RemoteConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    limiter: Semaphore,
    next_id: AtomicU64,
}

impl Http {
    fn new(config: RemoteConfig) -> Result<Self> {
        let problems = config.violations();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
                .http_status_as_error(false)
                .build(),
        );
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        Ok(Http {
            limiter: Semaphore::new(config.max_concurrency),
            config,
            agent,
            api_key,
            next_id: AtomicU64::new(1),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// Runs `op` up to `max_retries` times while it fails with a retryable error,
    /// sleeping `backoff_ms * 2^i` between attempts.
    fn with_retries<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.config.max_retries.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(Error::Transport { message, .. }) => {
                    log::warn!("request attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(other) => return Err(other),
            }
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }

    fn post_once(&self, path: &str, body: &Value, prompt_tokens: usize) -> Result<Value> {
        let _permit = self.limiter.acquire();
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut req = self
            .agent
            .post(self.url(path))
            .header("x-request-id", request_id.to_string());
        if let Some(key) = &self.api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let transport = |e: ureq::Error| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        };
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Error::Backend(format!("malformed response body: {e}"))),
            429 | 500..=599 => Err(Error::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {}", truncate(&text, 200)),
            }),
            _ if mentions_context_overflow(&text) => Err(Error::ContextTooLong {
                tokens: prompt_tokens,
                limit: self.config.context_limit_tokens.unwrap_or(0),
            }),
            _ => Err(Error::Backend(format!(
                "HTTP {status}: {}",
                truncate(&text, 200)
            ))),
        }
    }

    fn post(&self, path: &str, body: &Value, prompt_tokens: usize) -> Result<Value> {
        self.with_retries(|| self.post_once(path, body, prompt_tokens))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn mentions_context_overflow(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    b.contains("context length") || b.contains("context_length") || b.contains("maximum context")
}

/// Backend over an OpenAI-compatible completion server (vLLM, TGI, llama.cpp, ...).
///
/// Option scoring sends `prompt + option` with `echo` and `logprobs` and sums the
/// log-probabilities of the tokens that overlap the option text.
pub struct RemoteBackend {
    http: Http,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        Ok(RemoteBackend {
            http: Http::new(config)?,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.http.config
    }
}

impl Backend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteCompletion
    }

    fn identity(&self) -> String {
        format!("remote:{}@{}", self.http.config.model, self.http.config.base_url)
    }

    fn context_limit(&self) -> Option<usize> {
        self.http.config.context_limit_tokens
    }

    fn generate(&self, req: &GenRequest) -> Result<String> {
        req.validate()?;
        check_context(&req.prompt, self.context_limit())?;
        let body = json!({
            "model": self.http.config.model,
            "prompt": req.prompt,
            "max_tokens": req.max_new_tokens,
            "temperature": req.temperature,
        });
        let resp = self
            .http
            .post("completions", &body, estimate_tokens(&req.prompt))?;
        resp.pointer("/choices/0/text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Backend("response has no choices[0].text".into()))
    }

    fn score_options(&self, req: &OptionScoreRequest) -> Result<Vec<f64>> {
        req.validate()?;
        if !self.http.config.supports_logprobs {
            return Err(Error::CapabilityUnsupported(format!(
                "per-option likelihood scoring (model `{}` configured without logprobs)",
                self.http.config.model
            )));
        }
        check_context(&req.prompt, self.context_limit())?;
        let prompts: Vec<String> = req
            .options
            .iter()
            .map(|o| format!("{}{}", req.prompt, o))
            .collect();
        let body = json!({
            "model": self.http.config.model,
            "prompt": prompts,
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": 1,
            "echo": true,
        });
        let resp = self
            .http
            .post("completions", &body, estimate_tokens(&req.prompt))?;
        parse_option_scores(&resp, &req.prompt, &req.options)
    }
}

#[derive(Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

#[derive(Deserialize)]
struct ScoredChoice {
    index: usize,
    logprobs: Option<Logprobs>,
}

/// Extracts per-option scores from an echoed completion response. Choices are
/// matched to options by their `index` field, not by position in the array.
/// Offsets are in characters.
pub fn parse_option_scores(resp: &Value, prompt: &str, options: &[String]) -> Result<Vec<f64>> {
    let choices: Vec<ScoredChoice> = serde_json::from_value(
        resp.get("choices")
            .cloned()
            .ok_or_else(|| Error::Backend("response has no choices".into()))?,
    )
    .map_err(|e| Error::Backend(format!("malformed choices: {e}")))?;
    let start = prompt.chars().count();
    let mut scores: Vec<Option<f64>> = vec![None; options.len()];
    for choice in choices {
        let Some(slot) = scores.get_mut(choice.index) else {
            return Err(Error::Backend(format!(
                "choice index {} out of range",
                choice.index
            )));
        };
        let lp = choice.logprobs.ok_or_else(|| {
            Error::CapabilityUnsupported("per-option likelihood scoring (no logprobs returned)".into())
        })?;
        if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() != lp.text_offset.len() {
            return Err(Error::Backend("logprob arrays differ in length".into()));
        }
        let end = start + options[choice.index].chars().count();
        let mut total = 0.0;
        let mut covered = 0usize;
        for i in 0..lp.tokens.len() {
            let tok_start = lp.text_offset[i];
            let tok_end = lp
                .text_offset
                .get(i + 1)
                .copied()
                .unwrap_or(tok_start + lp.tokens[i].chars().count());
            if tok_end <= start || tok_start >= end {
                continue;
            }
            let logprob = lp.token_logprobs[i].ok_or_else(|| {
                Error::Backend(format!("missing logprob for option token {i}"))
            })?;
            total += logprob;
            covered += 1;
        }
        if covered == 0 || !total.is_finite() {
            return Err(Error::Backend(format!(
                "no scorable tokens for option `{}`",
                options[choice.index]
            )));
        }
        *slot = Some(total);
    }
    scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::Backend(format!("no choice for option {i}"))))
        .collect()
}

/// Fetches embeddings from an OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    http: Http,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        Ok(RemoteEmbedder {
            http: Http::new(config)?,
        })
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let model = self
            .http
            .config
            .embedding_model
            .clone()
            .unwrap_or_else(|| self.http.config.model.clone());
        let body = json!({ "model": model, "input": texts });
        let resp = self.http.post("embeddings", &body, 0)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Backend("embedding response has no data".into()))?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for item in data {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Backend("embedding item without index".into()))?
                as usize;
            let vector: Vec<f64> = serde_json::from_value(
                item.get("embedding").cloned().unwrap_or(Value::Null),
            )
            .map_err(|e| Error::Backend(format!("bad embedding: {e}")))?;
            match out.get_mut(index) {
                Some(slot) => *slot = Some(vector),
                None => return Err(Error::Backend(format!("embedding index {index} out of range"))),
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Backend(format!("missing embedding {i}"))))
            .collect()
    }
}
