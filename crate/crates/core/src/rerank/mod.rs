//! Second-stage reranking of the head of a first-stage ranking.
//!
//! Three strategies reorder the top-`window` candidates:
//!
//! - **listwise**: one prompt lists every candidate; the model answers with an order.
//! - **pairwise**: every ordered pair is judged; candidates are ranked by win ratio.
//! - **lexical**: ROUGE-1 or ROUGE-L F-measure between query and candidate text.
//!
//! Candidates outside the window keep their first-stage order after the reranked head.

mod lexical;
mod listwise;
mod pairwise;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, DEFAULT_MAX_NEW_TOKENS};
use crate::corpus::SourceKind;
use crate::error::{Error, Result};
use crate::run::{RankedList, Stage};
use crate::template::PromptTemplate;

pub use lexical::{lexical_rerank, rouge1_f, rouge_l_f, rouge_tokens, LexicalVariant};
pub use listwise::{
    listwise_prompt, listwise_rerank, parse_listwise_output, render_passages, ListwiseResult,
    LISTWISE_TEMPLATE,
};
pub use pairwise::{
    compare_pair, map_free_generation, pairwise_prompt, pairwise_rerank, ComparisonOutcome,
    PairwiseResult, Winner, PAIRWISE_OPTIONS, PAIRWISE_TEMPLATE,
};

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_PASSAGE_BUDGET: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Listwise,
    Pairwise,
    Lexical,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Listwise => "listwise",
            Strategy::Pairwise => "pairwise",
            Strategy::Lexical => "lexical",
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            Strategy::Listwise => Stage::RerankListwise,
            Strategy::Pairwise => Stage::RerankPairwise,
            Strategy::Lexical => Stage::RerankLexical,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "listwise" => Ok(Strategy::Listwise),
            "pairwise" => Ok(Strategy::Pairwise),
            "lexical" => Ok(Strategy::Lexical),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

/// How a pairwise judgment is decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseMode {
    /// Compare the likelihoods of the continuations "A" and "B".
    Classification,
    /// Generate freely and map the text onto A or B.
    FreeGeneration,
}

#[derive(Debug, Clone)]
pub struct RerankConfig {
    pub window: usize,
    pub strategy: Strategy,
    pub query_source: SourceKind,
    pub doc_source: SourceKind,
    /// Words kept from the query and each candidate before prompt assembly.
    pub passage_token_budget: usize,
    pub pairwise_mode: PairwiseMode,
    pub lexical_variant: LexicalVariant,
    pub max_new_tokens: usize,
    pub listwise_template: PromptTemplate,
    pub pairwise_template: PromptTemplate,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            window: DEFAULT_WINDOW,
            strategy: Strategy::Pairwise,
            query_source: SourceKind::Asr,
            doc_source: SourceKind::Asr,
            passage_token_budget: DEFAULT_PASSAGE_BUDGET,
            pairwise_mode: PairwiseMode::Classification,
            lexical_variant: LexicalVariant::RougeL,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            listwise_template: PromptTemplate::parse(LISTWISE_TEMPLATE),
            pairwise_template: PromptTemplate::parse(PAIRWISE_TEMPLATE),
        }
    }
}

impl RerankConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.window == 0 {
            v.push("rerank.window must be at least 1".into());
        }
        if self.passage_token_budget == 0 {
            v.push("rerank.passage_token_budget must be at least 1".into());
        }
        if self.max_new_tokens == 0 {
            v.push("rerank.max_new_tokens must be at least 1".into());
        }
        if let Err(Error::InvalidConfig(p)) =
            self.listwise_template
                .check("listwise", &["query", "passages"], &["n"])
        {
            v.extend(p);
        }
        if let Err(Error::InvalidConfig(p)) = self.pairwise_template.check(
            "pairwise",
            &["query", "passage_A", "passage_B"],
            &[],
        ) {
            v.extend(p);
        }
        v
    }
}

/// A first-stage candidate with the text the reranker will see.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub text: String,
}

/// First `budget` whitespace-separated words of `text`, joined by single spaces.
pub fn truncate_passage(text: &str, budget: usize) -> String {
    text.split_whitespace()
        .take(budget)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub list: RankedList,
    /// Pairwise judgments in issue order; empty for other strategies.
    pub comparisons: Vec<ComparisonOutcome>,
    /// Strategy score for each window document in the new order (win ratio, ROUGE F,
    /// or listwise position score).
    pub window_scores: Vec<(String, f64)>,
    /// Share of unordered pairs whose two orderings picked different winners.
    pub disagreement_rate: Option<f64>,
    /// Set when listwise output could not be parsed and first-stage order was kept.
    pub fallback: Option<String>,
}

/// Places `order` (indices into the window) first, then the rest of `first_stage`.
pub fn assemble(first_stage: &RankedList, order: &[usize], stage: Stage) -> RankedList {
    let window = order.len();
    let head = order.iter().map(|&i| first_stage.items[i].doc_id.clone());
    let tail = first_stage.items[window..].iter().map(|it| it.doc_id.clone());
    RankedList::from_order(first_stage.query_id.clone(), stage, head.chain(tail))
}

/// Reranks the head of one first-stage list. `doc_text` supplies the candidate text
/// in the configured document source.
pub fn rerank_query<B, F>(
    first_stage: &RankedList,
    query_text: &str,
    doc_text: F,
    backend: &B,
    cfg: &RerankConfig,
) -> Result<RerankOutcome>
where
    B: Backend + ?Sized,
    F: Fn(&str) -> Result<String>,
{
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    let n = cfg.window.min(first_stage.len());
    let stage = cfg.strategy.stage();
    if n == 0 {
        return Ok(RerankOutcome {
            list: assemble(first_stage, &[], stage),
            comparisons: Vec::new(),
            window_scores: Vec::new(),
            disagreement_rate: None,
            fallback: None,
        });
    }
    let mut candidates = Vec::with_capacity(n);
    for it in first_stage.head(n) {
        candidates.push(Candidate {
            doc_id: it.doc_id.clone(),
            text: doc_text(&it.doc_id)?,
        });
    }

    let mut comparisons = Vec::new();
    let mut disagreement_rate = None;
    let mut fallback = None;
    let (order, scores): (Vec<usize>, Vec<f64>) = match cfg.strategy {
        Strategy::Lexical => {
            let scored = lexical_rerank(query_text, &candidates, cfg.lexical_variant)?;
            scored.into_iter().unzip()
        }
        Strategy::Listwise => {
            let query = truncate_passage(query_text, cfg.passage_token_budget);
            let truncated = truncated(&candidates, cfg.passage_token_budget);
            let res = listwise_rerank(&query, &truncated, backend, cfg)?;
            if let Some(w) = &res.fallback {
                log::warn!("query `{}`: {w}", first_stage.query_id);
            }
            fallback = res.fallback;
            let scores = (0..n).map(|p| (n - p) as f64 / n as f64).collect();
            (res.order, scores)
        }
        Strategy::Pairwise => {
            let query = truncate_passage(query_text, cfg.passage_token_budget);
            let truncated = truncated(&candidates, cfg.passage_token_budget);
            let res = pairwise_rerank(&first_stage.query_id, &query, &truncated, backend, cfg)?;
            comparisons = res.comparisons;
            disagreement_rate = res.disagreement_rate;
            let scores = res.order.iter().map(|&i| res.win_ratios[i]).collect();
            (res.order, scores)
        }
    };

    let window_scores = order
        .iter()
        .zip(scores)
        .map(|(&i, s)| (candidates[i].doc_id.clone(), s))
        .collect();
    Ok(RerankOutcome {
        list: assemble(first_stage, &order, stage),
        comparisons,
        window_scores,
        disagreement_rate,
        fallback,
    })
}

fn truncated(candidates: &[Candidate], budget: usize) -> Vec<Candidate> {
    candidates
        .iter()
        .map(|c| Candidate {
            doc_id: c.doc_id.clone(),
            text: truncate_passage(&c.text, budget),
        })
        .collect()
}
