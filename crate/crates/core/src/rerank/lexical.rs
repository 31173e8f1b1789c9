use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Candidate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LexicalVariant {
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rougeL")]
    RougeL,
}

impl std::str::FromStr for LexicalVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rouge1" => Ok(LexicalVariant::Rouge1),
            "rougeL" | "rougel" => Ok(LexicalVariant::RougeL),
            other => Err(Error::InvalidArgument(format!("unknown lexical variant `{other}`"))),
        }
    }
}

/// Lowercased alphanumeric runs.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn f_measure(overlap: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 || hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// Unigram-overlap F-measure with clipped counts.
pub fn rouge1_f(reference: &[String], hypothesis: &[String]) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in hypothesis {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap, hypothesis.len(), reference.len())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Longest-common-subsequence F-measure.
pub fn rouge_l_f(reference: &[String], hypothesis: &[String]) -> f64 {
    f_measure(lcs_len(reference, hypothesis), hypothesis.len(), reference.len())
}

/// Scores each candidate against the query text (as reference) and returns
/// `(window index, F)` best first; equal scores keep first-stage order.
pub fn lexical_rerank(
    query: &str,
    candidates: &[Candidate],
    variant: LexicalVariant,
) -> Result<Vec<(usize, f64)>> {
    if query.trim().is_empty() {
        return Err(Error::InvalidArgument("query text is empty".into()));
    }
    let reference = rouge_tokens(query);
    let mut scored = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        if c.text.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "candidate `{}` has empty text",
                c.doc_id
            )));
        }
        let hyp = rouge_tokens(&c.text);
        let f = match variant {
            LexicalVariant::Rouge1 => rouge1_f(&reference, &hyp),
            LexicalVariant::RougeL => rouge_l_f(&reference, &hyp),
        };
        scored.push((i, f));
    }
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    Ok(scored)
}
