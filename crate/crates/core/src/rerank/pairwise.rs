use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Candidate, PairwiseMode, RerankConfig};
use crate::backend::{Backend, GenRequest, OptionScoreRequest};
use crate::error::{Error, Result};

pub const PAIRWISE_TEMPLATE: &str = "Query: {query}

Passage A: {passage_A}

Passage B: {passage_B}

Which passage is more relevant to the topic of the query, Passage A or Passage B?
Answer:";

/// Label continuations scored in classification mode.
pub const PAIRWISE_OPTIONS: [&str; 2] = ["A", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

/// One ordered pairwise judgment, `a` shown first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub query_id: String,
    pub a: String,
    pub b: String,
    pub winner: Winner,
    /// `score(A) - score(B)`.
    pub margin: f64,
}

pub fn pairwise_prompt(query: &str, a: &str, b: &str, cfg: &RerankConfig) -> Result<String> {
    cfg.pairwise_template
        .render(&[("query", query), ("passage_A", a), ("passage_B", b)])
}

/// Maps free text to +1 (A), -1 (B) or 0 (undecided) by its leading word.
pub fn map_free_generation(text: &str) -> f64 {
    let t = text
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let t = t.strip_prefix("passage").map(str::trim_start).unwrap_or(&t);
    let mut chars = t.chars();
    let first = chars.next();
    let boundary = chars.next().is_none_or(|c| !c.is_alphanumeric());
    match (first, boundary) {
        (Some('a'), true) => 1.0,
        (Some('b'), true) => -1.0,
        _ => 0.0,
    }
}

/// Judges whether passage A beats passage B for the query. Returns the margin
/// `score(A) - score(B)`.
pub fn compare_pair<B: Backend + ?Sized>(
    query: &str,
    a: &str,
    b: &str,
    backend: &B,
    cfg: &RerankConfig,
) -> Result<f64> {
    let prompt = pairwise_prompt(query, a, b, cfg)?;
    match cfg.pairwise_mode {
        PairwiseMode::Classification => {
            let scores = backend
                .score_options(&OptionScoreRequest::new(prompt, &PAIRWISE_OPTIONS))
                .map_err(|e| match e {
                    Error::CapabilityUnsupported(what) => Error::CapabilityUnsupported(format!(
                        "{what}; pairwise classification needs option likelihoods \
                         (switch to free-generation mode or a logprob-capable backend)"
                    )),
                    other => other,
                })?;
            let margin = scores[0] - scores[1];
            if !margin.is_finite() {
                return Err(Error::Backend(format!(
                    "non-finite comparison scores {scores:?}"
                )));
            }
            Ok(margin)
        }
        PairwiseMode::FreeGeneration => {
            let text =
                backend.generate(&GenRequest::new(prompt).max_new_tokens(cfg.max_new_tokens))?;
            Ok(map_free_generation(&text))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseResult {
    /// 0-based window indices, best first.
    pub order: Vec<usize>,
    pub comparisons: Vec<ComparisonOutcome>,
    /// Indexed by window position.
    pub wins: Vec<usize>,
    pub win_ratios: Vec<f64>,
    pub disagreement_rate: Option<f64>,
}

/// Every ordered pair `(i, j)`, `i != j`, row-major.
fn schedule(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Full round-robin over the window with both presentation orders.
///
/// A comparison with a positive margin goes to A, a negative one to B, and an exact
/// tie to whichever candidate ranked higher in the first stage. Candidates are
/// ordered by wins (equivalently win ratio `wins / (2(n-1))`), ties again by
/// first-stage rank.
pub fn pairwise_rerank<B: Backend + ?Sized>(
    query_id: &str,
    query: &str,
    candidates: &[Candidate],
    backend: &B,
    cfg: &RerankConfig,
) -> Result<PairwiseResult> {
    let n = candidates.len();
    let pairs = schedule(n);
    let margins: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| compare_pair(query, &candidates[i].text, &candidates[j].text, backend, cfg))
        .collect::<Result<_>>()?;

    let mut wins = vec![0usize; n];
    let mut winner_of = vec![vec![usize::MAX; n]; n];
    let comparisons = pairs
        .iter()
        .zip(&margins)
        .map(|(&(i, j), &margin)| {
            let a_wins = margin > 0.0 || (margin == 0.0 && i < j);
            let w = if a_wins { i } else { j };
            wins[w] += 1;
            winner_of[i][j] = w;
            ComparisonOutcome {
                query_id: query_id.to_string(),
                a: candidates[i].doc_id.clone(),
                b: candidates[j].doc_id.clone(),
                winner: if a_wins { Winner::A } else { Winner::B },
                margin,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| wins[y].cmp(&wins[x]).then(x.cmp(&y)));

    let per_candidate = 2 * n.saturating_sub(1);
    let win_ratios = wins
        .iter()
        .map(|&w| {
            if per_candidate == 0 {
                0.0
            } else {
                w as f64 / per_candidate as f64
            }
        })
        .collect();

    let unordered = n * n.saturating_sub(1) / 2;
    let disagreement_rate = (unordered > 0).then(|| {
        let disagree = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| winner_of[i][j] != winner_of[j][i])
            .count();
        disagree as f64 / unordered as f64
    });

    Ok(PairwiseResult {
        order,
        comparisons,
        wins,
        win_ratios,
        disagreement_rate,
    })
}
