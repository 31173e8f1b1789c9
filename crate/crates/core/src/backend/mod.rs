//! Text-generation backends.
//!
//! Every model-dependent operation (listwise and pairwise reranking, summarization,
//! fact checking) goes through [`Backend`], which offers free generation and
//! scoring of fixed continuations. [`RemoteBackend`] talks to an OpenAI-compatible
//! completion endpoint; [`MockBackend`] is deterministic and needs no model.

mod mock;
mod remote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use mock::{GenerateFn, MockBackend, ScoreFn};
pub use remote::{RemoteBackend, RemoteConfig, RemoteEmbedder, Semaphore};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    /// 0 means greedy decoding.
    pub temperature: f64,
}

impl GenRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenRequest {
            prompt: prompt.into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
        }
    }

    pub fn max_new_tokens(mut self, n: usize) -> Self {
        self.max_new_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::InvalidArgument("prompt must not be empty".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument("max_new_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

/// Scores each candidate continuation of a prompt by model log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScoreRequest {
    pub prompt: String,
    pub options: Vec<String>,
}

impl OptionScoreRequest {
    pub fn new(prompt: impl Into<String>, options: &[&str]) -> Self {
        OptionScoreRequest {
            prompt: prompt.into(),
            options: options.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::InvalidArgument("prompt must not be empty".into()));
        }
        if self.options.len() < 2 {
            return Err(Error::InvalidArgument("need at least two options".into()));
        }
        for (i, o) in self.options.iter().enumerate() {
            if o.is_empty() {
                return Err(Error::InvalidArgument("options must be non-empty".into()));
            }
            if self.options[..i].contains(o) {
                return Err(Error::InvalidArgument(format!("duplicate option `{o}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteCompletion,
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::RemoteCompletion => "remote_completion",
            BackendKind::Mock => "mock",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" | "remote_completion" => Ok(BackendKind::RemoteCompletion),
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::InvalidArgument(format!("unknown backend `{other}`"))),
        }
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Stable description (kind, model, mode) recorded in artifact manifests.
    fn identity(&self) -> String;

    /// Prompt budget in estimated tokens, if the backend has one.
    fn context_limit(&self) -> Option<usize> {
        None
    }

    fn generate(&self, req: &GenRequest) -> Result<String>;

    /// One finite log-score per option, aligned with `req.options`.
    fn score_options(&self, req: &OptionScoreRequest) -> Result<Vec<f64>>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn context_limit(&self) -> Option<usize> {
        (**self).context_limit()
    }
    fn generate(&self, req: &GenRequest) -> Result<String> {
        (**self).generate(req)
    }
    fn score_options(&self, req: &OptionScoreRequest) -> Result<Vec<f64>> {
        (**self).score_options(req)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn context_limit(&self) -> Option<usize> {
        (**self).context_limit()
    }
    fn generate(&self, req: &GenRequest) -> Result<String> {
        (**self).generate(req)
    }
    fn score_options(&self, req: &OptionScoreRequest) -> Result<Vec<f64>> {
        (**self).score_options(req)
    }
}

/// Rough token count: whitespace-separated words. No tokenizer is bundled, so
/// limits are enforced against this estimate.
pub fn estimate_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Fails with `ContextTooLong` when `prompt` exceeds `limit`.
pub fn check_context(prompt: &str, limit: Option<usize>) -> Result<()> {
    if let Some(limit) = limit {
        let tokens = estimate_tokens(prompt);
        if tokens > limit {
            return Err(Error::ContextTooLong { tokens, limit });
        }
    }
    Ok(())
}

/// Platform-independent 64-bit hash of a sequence of strings.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Index of the highest score; the first wins on ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= *s => {}
            _ => best = Some(i),
        }
    }
    best
}
