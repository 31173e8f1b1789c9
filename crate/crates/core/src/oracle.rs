//! A relevance-oracle mock backend.
//!
//! It knows the topic labels behind every query and document text, so it can
//! answer the reranking prompts the way a perfect judge would. Pairwise answers can
//! be flipped at random with a fixed probability to simulate a noisy judge; the
//! flip is a pure function of `(seed, prompt)` so runs stay reproducible.
//!
//! Fact-check prompts get a crude word-overlap stand-in so that command runs end to
//! end as well: decomposition splits the text into short word groups, and a fact is
//! "True" when all its words occur in the evidence, "False" when none do.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::backend::{stable_hash, MockBackend};
use crate::corpus::{Corpus, QuerySet};
use crate::error::{Error, Result};
use crate::factcheck::FactCheckOptions;
use crate::rerank::{truncate_passage, RerankConfig};
use crate::template::PromptTemplate;

const WIN: f64 = -0.1;
const LOSE: f64 = -2.3;
const TIE: f64 = -1.0;

struct Judge {
    queries: HashMap<String, String>,
    docs: HashMap<String, BTreeSet<String>>,
    flip_prob: f64,
    seed: u64,
}

impl Judge {
    fn relevant(&self, query: &str, passage: &str) -> Option<bool> {
        let topic = self.queries.get(query.trim())?;
        let topics = self.docs.get(passage.trim())?;
        Some(topics.contains(topic))
    }

    fn flipped(&self, prompt: &str) -> bool {
        if self.flip_prob <= 0.0 {
            return false;
        }
        let h = stable_hash(&[&self.seed.to_string(), prompt]);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        u < self.flip_prob
    }

    /// `Some(+1 / -1 / 0)` for A better / B better / equally relevant.
    fn pairwise(&self, tpl: &PromptTemplate, prompt: &str) -> Option<i8> {
        let v = tpl.extract(prompt)?;
        let q = v.get("query")?;
        let a = self.relevant(q, v.get("passage_A")?)?;
        let b = self.relevant(q, v.get("passage_B")?)?;
        let pref = a as i8 - b as i8;
        Some(if pref != 0 && self.flipped(prompt) { -pref } else { pref })
    }

    fn listwise(&self, tpl: &PromptTemplate, prompt: &str) -> Option<String> {
        let v = tpl.extract(prompt)?;
        let q = v.get("query")?;
        let mut rels = Vec::new();
        for line in v.get("passages")?.lines() {
            let rest = line.strip_prefix("Passage ")?;
            let (num, text) = rest.split_once(": ")?;
            let num: usize = num.parse().ok()?;
            rels.push((num, self.relevant(q, text)?));
        }
        rels.sort_by_key(|&(num, rel)| (!rel, num));
        Some(
            rels.iter()
                .map(|(n, _)| format!("Passage {n}"))
                .collect::<Vec<_>>()
                .join(" > "),
        )
    }
}

const FACT_WORDS: usize = 6;

fn decompose(tpl: &PromptTemplate, prompt: &str) -> Option<String> {
    let v = tpl.extract(prompt)?;
    let words: Vec<&str> = v.get("text")?.split_whitespace().collect();
    Some(
        words
            .chunks(FACT_WORDS)
            .map(|c| format!("- {}", c.join(" ")))
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

fn verify(tpl: &PromptTemplate, prompt: &str) -> Option<String> {
    let v = tpl.extract(prompt)?;
    let evidence: BTreeSet<&str> = v.get("evidence")?.split_whitespace().collect();
    let fact: Vec<&str> = v.get("fact")?.split_whitespace().collect();
    let found = fact.iter().filter(|w| evidence.contains(*w)).count();
    Some(
        if found == fact.len() {
            "True"
        } else if found == 0 {
            "False"
        } else {
            "The context does not say."
        }
        .into(),
    )
}

/// Builds a mock that judges topic relevance for prompts assembled with `cfg`.
///
/// Query texts come from `cfg.query_source` and candidate texts from
/// `cfg.doc_source`, truncated the same way the reranker truncates them. Prompts
/// the oracle cannot interpret fall through to the default hash behavior.
pub fn relevance_oracle(
    corpus: &Corpus,
    queries: &QuerySet,
    cfg: &RerankConfig,
    flip_prob: f64,
    seed: u64,
) -> Result<MockBackend> {
    relevance_oracle_with(corpus, queries, cfg, &FactCheckOptions::default(), flip_prob, seed)
}

/// [`relevance_oracle`] with custom fact-check templates.
pub fn relevance_oracle_with(
    corpus: &Corpus,
    queries: &QuerySet,
    cfg: &RerankConfig,
    facts: &FactCheckOptions,
    flip_prob: f64,
    seed: u64,
) -> Result<MockBackend> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::InvalidArgument(format!(
            "flip probability {flip_prob} is outside [0, 1]"
        )));
    }
    let budget = cfg.passage_token_budget;
    let mut query_topics = HashMap::new();
    for q in &queries.entries {
        let text = truncate_passage(corpus.text(&q.id, cfg.query_source)?, budget);
        if let Some(prev) = query_topics.insert(text, q.topic.clone()) {
            if prev != q.topic {
                log::warn!("oracle: two queries share a text but not a topic (`{}`)", q.id);
            }
        }
    }
    let mut doc_topics: HashMap<String, BTreeSet<String>> = HashMap::new();
    for d in corpus.documents() {
        if let Some(t) = d.text(cfg.doc_source) {
            doc_topics
                .entry(truncate_passage(t, budget))
                .or_default()
                .extend(d.topics.iter().cloned());
        }
    }
    let judge = Arc::new(Judge {
        queries: query_topics,
        docs: doc_topics,
        flip_prob,
        seed,
    });

    let pair_tpl = cfg.pairwise_template.clone();
    let list_tpl = cfg.listwise_template.clone();
    let decompose_tpl = facts.decompose_template.clone();
    let verify_tpl = facts.verify_template.clone();
    let scorer_judge = Arc::clone(&judge);
    let scorer_tpl = pair_tpl.clone();
    Ok(MockBackend::new()
        .named(format!("oracle(flip={flip_prob},seed={seed})"))
        .with_scorer(Arc::new(move |prompt, options| {
            if options.len() != 2 {
                return None;
            }
            Some(match scorer_judge.pairwise(&scorer_tpl, prompt)? {
                1 => vec![WIN, LOSE],
                -1 => vec![LOSE, WIN],
                _ => vec![TIE, TIE],
            })
        }))
        .with_generator(Arc::new(move |req| {
            if let Some(p) = judge.pairwise(&pair_tpl, &req.prompt) {
                return Some(
                    match p {
                        1 => "Passage A",
                        -1 => "Passage B",
                        _ => "Both passages are equally relevant.",
                    }
                    .into(),
                );
            }
            judge
                .listwise(&list_tpl, &req.prompt)
                .or_else(|| decompose(&decompose_tpl, &req.prompt))
                .or_else(|| verify(&verify_tpl, &req.prompt))
        })))
}
