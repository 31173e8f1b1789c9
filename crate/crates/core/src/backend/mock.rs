use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{check_context, stable_hash, Backend, BackendKind, GenRequest, OptionScoreRequest};
use crate::error::{Error, Result};

/// Custom generation hook. Returning `None` defers to the hash fallback.
pub type GenerateFn = Arc<dyn Fn(&GenRequest) -> Option<String> + Send + Sync>;
/// Custom scoring hook over `(prompt, options)`. Returning `None` defers to the fallback.
pub type ScoreFn = Arc<dyn Fn(&str, &[String]) -> Option<Vec<f64>> + Send + Sync>;

/// Deterministic backend for tests and model-free runs.
///
/// Generation looks up a scripted table keyed by a stable hash of the prompt, then
/// an optional hook, then falls back to a hash-derived string. Scoring uses a fixed
/// per-option table, then an optional hook, then hash-derived scores in `[-10, 0]`.
/// All paths are pure functions of the request.
pub struct MockBackend {
    name: String,
    scripted: HashMap<u64, String>,
    option_scores: HashMap<String, f64>,
    generator: Option<GenerateFn>,
    scorer: Option<ScoreFn>,
    supports_scoring: bool,
    context_limit: Option<usize>,
    record_prompts: bool,
    generate_calls: AtomicUsize,
    score_calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend {
            name: "hash".into(),
            scripted: HashMap::new(),
            option_scores: HashMap::new(),
            generator: None,
            scorer: None,
            supports_scoring: true,
            context_limit: None,
            record_prompts: false,
            generate_calls: AtomicUsize::new(0),
            score_calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Name reported in [`Backend::identity`].
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn script(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.scripted.insert(stable_hash(&[prompt]), response.into());
        self
    }

    pub fn option_score(mut self, option: &str, score: f64) -> Self {
        self.option_scores.insert(option.to_string(), score);
        self
    }

    pub fn with_generator(mut self, f: GenerateFn) -> Self {
        self.generator = Some(f);
        self
    }

    pub fn with_scorer(mut self, f: ScoreFn) -> Self {
        self.scorer = Some(f);
        self
    }

    pub fn without_scoring(mut self) -> Self {
        self.supports_scoring = false;
        self
    }

    pub fn with_context_limit(mut self, limit: usize) -> Self {
        self.context_limit = Some(limit);
        self
    }

    /// Keep every prompt seen, in call order, for inspection in tests.
    pub fn recording(mut self) -> Self {
        self.record_prompts = true;
        self
    }

    pub fn generate_calls(&self) -> usize {
        self.generate_calls.load(Ordering::SeqCst)
    }

    pub fn score_calls(&self) -> usize {
        self.score_calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }

    fn record(&self, prompt: &str) {
        if self.record_prompts {
            self.prompts
                .lock()
                .expect("prompt log poisoned")
                .push(prompt.to_string());
        }
    }
}

fn hash_score(prompt: &str, option: &str) -> f64 {
    let h = stable_hash(&[prompt, option]);
    -10.0 * (h >> 11) as f64 / (1u64 << 53) as f64
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn identity(&self) -> String {
        format!("mock:{}", self.name)
    }

    fn context_limit(&self) -> Option<usize> {
        self.context_limit
    }

    fn generate(&self, req: &GenRequest) -> Result<String> {
        req.validate()?;
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        self.record(&req.prompt);
        check_context(&req.prompt, self.context_limit)?;
        let key = stable_hash(&[&req.prompt]);
        if let Some(s) = self.scripted.get(&key) {
            return Ok(s.clone());
        }
        if let Some(s) = self.generator.as_ref().and_then(|g| g(req)) {
            return Ok(s);
        }
        Ok(format!("mock response {key:016x}"))
    }

    fn score_options(&self, req: &OptionScoreRequest) -> Result<Vec<f64>> {
        req.validate()?;
        if !self.supports_scoring {
            return Err(Error::CapabilityUnsupported(
                "per-option likelihood scoring".into(),
            ));
        }
        self.score_calls.fetch_add(1, Ordering::SeqCst);
        self.record(&req.prompt);
        check_context(&req.prompt, self.context_limit)?;
        if req
            .options
            .iter()
            .all(|o| self.option_scores.contains_key(o))
        {
            return Ok(req.options.iter().map(|o| self.option_scores[o]).collect());
        }
        if let Some(scores) = self.scorer.as_ref().and_then(|f| f(&req.prompt, &req.options)) {
            if scores.len() != req.options.len() || scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::Backend(
                    "mock scorer returned misaligned or non-finite scores".into(),
                ));
            }
            return Ok(scores);
        }
        Ok(req
            .options
            .iter()
            .map(|o| hash_score(&req.prompt, o))
            .collect())
    }
}
