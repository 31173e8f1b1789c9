//! AutoSum: LLM summaries of ASR transcripts, stored as a third text source.
//!
//! Transcripts that do not fit the backend's context are split into fixed-size word
//! chunks; each chunk is summarized with the same prompt and the joined chunk
//! summaries are summarized once more. Such outputs are marked `chunked`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{estimate_tokens, Backend, GenRequest, DEFAULT_MAX_NEW_TOKENS};
use crate::corpus::{Corpus, SourceKind};
use crate::error::{Error, Result};
use crate::template::PromptTemplate;

pub const AUTOSUM_TEMPLATE: &str =
    "Write a detailed synopsis of the following transcript:{transcript}";

const MAX_MERGE_DEPTH: usize = 8;

#[derive(Debug, Clone)]
pub struct AutosumOptions {
    pub max_new_tokens: usize,
    pub template: PromptTemplate,
}

impl Default for AutosumOptions {
    fn default() -> Self {
        AutosumOptions {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            template: PromptTemplate::parse(AUTOSUM_TEMPLATE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub chunked: bool,
    /// Generation calls issued for this transcript.
    pub backend_calls: usize,
}

struct Summarizer<'a, B: Backend + ?Sized> {
    backend: &'a B,
    opts: &'a AutosumOptions,
    calls: usize,
}

impl<B: Backend + ?Sized> Summarizer<'_, B> {
    fn prompt(&self, text: &str) -> Result<String> {
        self.opts.template.render(&[("transcript", text)])
    }

    fn call(&mut self, prompt: String) -> Result<String> {
        self.calls += 1;
        self.backend
            .generate(&GenRequest::new(prompt).max_new_tokens(self.opts.max_new_tokens))
    }

    fn summarize(&mut self, text: &str, depth: usize) -> Result<(String, bool)> {
        let prompt = self.prompt(text)?;
        let limit = self.backend.context_limit();
        let fits = limit.is_none_or(|l| estimate_tokens(&prompt) <= l);
        if fits {
            match self.call(prompt) {
                Ok(s) => return Ok((s, false)),
                Err(Error::ContextTooLong { limit: reported, .. }) => {
                    let limit = limit.or((reported > 0).then_some(reported)).ok_or(
                        Error::ContextTooLong {
                            tokens: estimate_tokens(text),
                            limit: reported,
                        },
                    )?;
                    return self.summarize_chunked(text, limit, depth).map(|s| (s, true));
                }
                Err(e) => return Err(e),
            }
        }
        let limit = limit.expect("limit is set when the prompt does not fit");
        self.summarize_chunked(text, limit, depth).map(|s| (s, true))
    }

    fn summarize_chunked(&mut self, text: &str, limit: usize, depth: usize) -> Result<String> {
        if depth >= MAX_MERGE_DEPTH {
            return Err(Error::ContextTooLong {
                tokens: estimate_tokens(text),
                limit,
            });
        }
        let overhead = estimate_tokens(&self.prompt("")?);
        let capacity = limit.saturating_sub(overhead);
        if capacity == 0 {
            return Err(Error::ContextTooLong {
                tokens: overhead,
                limit,
            });
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut partials = Vec::with_capacity(words.len().div_ceil(capacity));
        for chunk in words.chunks(capacity) {
            let prompt = self.prompt(&chunk.join(" "))?;
            partials.push(self.call(prompt)?);
        }
        let merged = partials.join("\n\n");
        let (summary, _) = self.summarize(&merged, depth + 1)?;
        Ok(summary)
    }
}

/// Summarizes one transcript with the AutoSum prompt.
pub fn summarize_transcript<B: Backend + ?Sized>(
    transcript: &str,
    backend: &B,
    opts: &AutosumOptions,
) -> Result<Summary> {
    if transcript.trim().is_empty() {
        return Err(Error::InvalidArgument("transcript must not be empty".into()));
    }
    let mut s = Summarizer {
        backend,
        opts,
        calls: 0,
    };
    let (text, chunked) = s.summarize(transcript, 0)?;
    Ok(Summary {
        text,
        chunked,
        backend_calls: s.calls,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutosumEntry {
    pub id: String,
    pub chunked: bool,
    pub backend_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutosumReport {
    pub summarized: Vec<AutosumEntry>,
    /// Documents already carrying an AutoSum text.
    pub cached: usize,
    pub failures: Vec<(String, String)>,
}

/// Fills the AutoSum text of every document that has an ASR transcript and no
/// AutoSum yet (or all of them with `force`). Documents are processed in parallel;
/// results are applied in corpus order.
pub fn summarize_corpus<B: Backend + ?Sized>(
    corpus: &mut Corpus,
    backend: &B,
    opts: &AutosumOptions,
    force: bool,
) -> Result<AutosumReport> {
    let mut report = AutosumReport::default();
    let todo: Vec<(String, String)> = corpus
        .documents()
        .iter()
        .filter_map(|d| {
            let asr = d.text(SourceKind::Asr)?;
            if !force && d.text(SourceKind::AutoSum).is_some() {
                return None;
            }
            Some((d.id.clone(), asr.to_string()))
        })
        .collect();
    if !force {
        report.cached = corpus
            .documents()
            .iter()
            .filter(|d| {
                d.text(SourceKind::Asr).is_some() && d.text(SourceKind::AutoSum).is_some()
            })
            .count();
    }

    let results: Vec<(String, Result<Summary>)> = todo
        .par_iter()
        .map(|(id, asr)| (id.clone(), summarize_transcript(asr, backend, opts)))
        .collect();

    for (id, res) in results {
        match res {
            Ok(summary) if !summary.text.trim().is_empty() => {
                corpus.set_text(&id, SourceKind::AutoSum, summary.text.trim().to_string())?;
                report.summarized.push(AutosumEntry {
                    id,
                    chunked: summary.chunked,
                    backend_calls: summary.backend_calls,
                });
            }
            Ok(_) => report
                .failures
                .push((id, "backend returned an empty summary".into())),
            Err(e) => report.failures.push((id, e.to_string())),
        }
    }
    Ok(report)
}
