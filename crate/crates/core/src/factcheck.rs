//! Information consistency between text sources via atomic facts.
//!
//! A hypothesis text is decomposed into short single-piece-of-information
//! statements with a one-shot prompt; each statement is then checked against an
//! evidence text by free generation. Answers starting with "true" or "false" map to
//! those verdicts and everything else to `Other`.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenRequest};
use crate::corpus::{Corpus, SourceKind};
use crate::error::{Error, Result};
use crate::template::PromptTemplate;

pub const DECOMPOSE_TEMPLATE: &str = "Please breakdown the following sentence into independent facts: \
He made his acting debut in the film The Moon is the Sun's Dream (1992), and continued to appear in small and supporting roles throughout the 1990s.
- He made his acting debut in the film.
- He made his acting debut in The Moon is the Sun's Dream.
- The Moon is the Sun's Dream is a film.
- The Moon is the Sun's Dream was released in 1992.
- After his acting debut, he appeared in small and supporting roles.
- After his acting debut, he appeared in small and supporting roles throughout the 1990s.

Please breakdown the following sentence into independent facts: {text}
";

pub const VERIFY_TEMPLATE: &str = "Answer the question about the context below.

Context: {evidence}

Input: {fact} True or False?
Output:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    True,
    False,
    Other,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::True => "True",
            Verdict::False => "False",
            Verdict::Other => "Other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub doc_id: String,
    pub hypothesis_source: SourceKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub fact: AtomicFact,
    pub evidence_source: SourceKind,
    pub verdict: Verdict,
    pub raw_response: String,
}

#[derive(Debug, Clone)]
pub struct FactCheckOptions {
    pub decompose_template: PromptTemplate,
    pub verify_template: PromptTemplate,
    pub max_new_tokens: usize,
}

impl Default for FactCheckOptions {
    fn default() -> Self {
        FactCheckOptions {
            decompose_template: PromptTemplate::parse(DECOMPOSE_TEMPLATE),
            verify_template: PromptTemplate::parse(VERIFY_TEMPLATE),
            max_new_tokens: 256,
        }
    }
}

impl FactCheckOptions {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(Error::InvalidConfig(p)) = self.decompose_template.check("decompose", &["text"], &[]) {
            v.extend(p);
        }
        if let Err(Error::InvalidConfig(p)) =
            self.verify_template.check("verify", &["fact", "evidence"], &[])
        {
            v.extend(p);
        }
        if self.max_new_tokens == 0 {
            v.push("factcheck.max_new_tokens must be at least 1".into());
        }
        v
    }
}

/// Strips a list marker (`-`, `*`, `•`, `1.`, `1)`) from a line. Unmarked lines
/// give `None`.
fn strip_marker(line: &str) -> Option<&str> {
    let t = line.trim();
    for m in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(m) {
            return Some(rest.trim());
        }
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r.trim());
        }
    }
    None
}

/// Bulleted or numbered lines of a decomposition answer. Unmarked lines are
/// treated as commentary and skipped.
pub fn parse_facts(output: &str) -> Vec<String> {
    output
        .lines()
        .filter_map(strip_marker)
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn decompose_facts<B: Backend + ?Sized>(
    doc_id: &str,
    source: SourceKind,
    text: &str,
    backend: &B,
    opts: &FactCheckOptions,
) -> Result<Vec<AtomicFact>> {
    if text.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "`{source}` text of `{doc_id}` is empty"
        )));
    }
    let prompt = opts.decompose_template.render(&[("text", text.trim())])?;
    let raw = backend.generate(&GenRequest::new(prompt).max_new_tokens(opts.max_new_tokens))?;
    let facts = parse_facts(&raw);
    if facts.is_empty() {
        return Err(Error::DecompositionFailure(raw.chars().take(200).collect()));
    }
    Ok(facts
        .into_iter()
        .map(|text| AtomicFact {
            doc_id: doc_id.to_string(),
            hypothesis_source: source,
            text,
        })
        .collect())
}

/// Total mapping from a free-generation answer to a verdict: after trimming
/// leading whitespace and punctuation, a leading word "true" or "false"
/// (any case) decides; anything else is `Other`.
pub fn map_verdict(raw: &str) -> Verdict {
    let t = raw
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let leading = |word: &str| {
        t.strip_prefix(word)
            .is_some_and(|rest| rest.chars().next().is_none_or(|c| !c.is_alphanumeric()))
    };
    if leading("true") {
        Verdict::True
    } else if leading("false") {
        Verdict::False
    } else {
        Verdict::Other
    }
}

pub fn verify_fact<B: Backend + ?Sized>(
    fact: &AtomicFact,
    evidence_source: SourceKind,
    evidence: &str,
    backend: &B,
    opts: &FactCheckOptions,
) -> Result<FactVerdict> {
    let prompt = opts
        .verify_template
        .render(&[("evidence", evidence.trim()), ("fact", &fact.text)])?;
    let raw = backend.generate(&GenRequest::new(prompt).max_new_tokens(opts.max_new_tokens))?;
    Ok(FactVerdict {
        fact: fact.clone(),
        evidence_source,
        verdict: map_verdict(&raw),
        raw_response: raw,
    })
}

/// Counts of verdicts; percentages are undefined when there are no facts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub true_: usize,
    pub false_: usize,
    pub other: usize,
}

impl VerdictCounts {
    pub fn add(&mut self, v: Verdict) {
        match v {
            Verdict::True => self.true_ += 1,
            Verdict::False => self.false_ += 1,
            Verdict::Other => self.other += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_ + self.false_ + self.other
    }

    /// `(%True, %False, %Other)`, or `None` with zero facts.
    pub fn percentages(&self) -> Option<(f64, f64, f64)> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let pct = |c: usize| 100.0 * c as f64 / n as f64;
        Some((pct(self.true_), pct(self.false_), pct(self.other)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub hypothesis: SourceKind,
    pub evidence: SourceKind,
    pub seed: u64,
    pub requested_sample: usize,
    pub sampled_docs: Vec<String>,
    pub counts: VerdictCounts,
    pub pct_true: Option<f64>,
    pub pct_false: Option<f64>,
    pub pct_other: Option<f64>,
    /// Documents excluded after a decomposition or backend failure.
    pub failed: Vec<(String, String)>,
    pub verdicts: Vec<FactVerdict>,
}

/// Chooses up to `n` ids uniformly without replacement with a seeded generator and
/// returns them sorted.
pub fn sample_ids(mut ids: Vec<String>, n: usize, seed: u64) -> Vec<String> {
    ids.sort();
    if n < ids.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = rand::seq::index::sample(&mut rng, ids.len(), n);
        let mut chosen: Vec<String> = picked.into_iter().map(|i| ids[i].clone()).collect();
        chosen.sort();
        chosen
    } else {
        ids
    }
}

fn check_document<B: Backend + ?Sized>(
    doc_id: &str,
    hypothesis: (SourceKind, &str),
    evidence: (SourceKind, &str),
    backend: &B,
    opts: &FactCheckOptions,
) -> Result<Vec<FactVerdict>> {
    let facts = decompose_facts(doc_id, hypothesis.0, hypothesis.1, backend, opts)?;
    facts
        .iter()
        .map(|f| verify_fact(f, evidence.0, evidence.1, backend, opts))
        .collect()
}

/// Decomposes the hypothesis text of a seeded sample of documents and verifies every
/// fact against the evidence text of the same document.
pub fn consistency_report<B: Backend + ?Sized>(
    corpus: &Corpus,
    hypothesis: SourceKind,
    evidence: SourceKind,
    backend: &B,
    sample_size: usize,
    seed: u64,
    opts: &FactCheckOptions,
) -> Result<ConsistencyReport> {
    let problems = opts.violations();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    if sample_size == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let eligible: Vec<String> = corpus
        .documents()
        .iter()
        .filter(|d| d.text(hypothesis).is_some() && d.text(evidence).is_some())
        .map(|d| d.id.clone())
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no document has both `{hypothesis}` and `{evidence}` texts"
        )));
    }
    let sampled = sample_ids(eligible, sample_size, seed);

    let results: Vec<(String, Result<Vec<FactVerdict>>)> = sampled
        .par_iter()
        .map(|id| {
            let doc = corpus.get(id).expect("sampled from corpus");
            let h = doc.text(hypothesis).expect("eligible");
            let e = doc.text(evidence).expect("eligible");
            (
                id.clone(),
                check_document(id, (hypothesis, h), (evidence, e), backend, opts),
            )
        })
        .collect();

    let mut counts = VerdictCounts::default();
    let mut verdicts = Vec::new();
    let mut failed = Vec::new();
    for (id, res) in results {
        match res {
            Ok(vs) => {
                for v in &vs {
                    counts.add(v.verdict);
                }
                verdicts.extend(vs);
            }
            Err(e) => {
                log::warn!("fact check of `{id}` failed: {e}");
                failed.push((id, e.to_string()));
            }
        }
    }
    let pct = counts.percentages();
    Ok(ConsistencyReport {
        hypothesis,
        evidence,
        seed,
        requested_sample: sample_size,
        sampled_docs: sampled,
        counts,
        pct_true: pct.map(|p| p.0),
        pct_false: pct.map(|p| p.1),
        pct_other: pct.map(|p| p.2),
        failed,
        verdicts,
    })
}

impl ConsistencyReport {
    pub const TSV_HEADER: &'static str = "Facts\tSource\t#facts\t%True\t%False\t%Other";

    fn fmt_pct(p: Option<f64>) -> String {
        p.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"))
    }

    /// One row in the layout of [`Self::TSV_HEADER`].
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.hypothesis,
            self.evidence,
            self.counts.total(),
            Self::fmt_pct(self.pct_true),
            Self::fmt_pct(self.pct_false),
            Self::fmt_pct(self.pct_other)
        )
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "# seed={} sampled={} failed={}\n{}\n{}\n",
            self.seed,
            self.sampled_docs.len(),
            self.failed.len(),
            Self::TSV_HEADER,
            self.tsv_row()
        )
    }

    /// Verdict tallies per document, for audits.
    pub fn per_document(&self) -> BTreeMap<String, VerdictCounts> {
        let mut out: BTreeMap<String, VerdictCounts> = BTreeMap::new();
        for v in &self.verdicts {
            out.entry(v.fact.doc_id.clone()).or_default().add(v.verdict);
        }
        out
    }
}
