//! Seeded synthetic archives shaped like a small topic-labelled audio collection.
//!
//! Every topic gets a random unit centroid; a document's embedding for a source is
//! its topic centroid plus Gaussian noise, renormalized. Transcripts are the noisiest
//! source and synopses the cleanest, so retrieval quality differs by source the way it
//! does on real data. Texts mix topic vocabulary with filler and begin with the
//! document id, which keeps every text unique.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Query, QuerySet, SourceKind};
use crate::embedding::{normalize, EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, Result};

pub const TOPIC_NAMES: [&str; 11] = [
    "Health",
    "Education",
    "Sport",
    "Politics",
    "Science",
    "Arts",
    "Business",
    "Environment",
    "Crime",
    "Religion",
    "Travel",
];

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ren", "tu", "vas", "po", "ni", "dor", "se", "fi", "gal", "bu", "ze", "hy", "mor",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub docs: usize,
    pub topics: usize,
    pub queries: usize,
    pub dim: usize,
    /// Set from the experiment-wide seed, not from the `[synth]` table.
    #[serde(skip)]
    pub seed: u64,
    /// Probability that a document carries a second topic label.
    pub second_topic_prob: f64,
    /// Noise scale per source, in units of the centroid norm.
    pub noise_asr: f64,
    pub noise_autosum: f64,
    pub noise_synopsis: f64,
    /// Share of topical words in each text; the rest is filler.
    pub topical_share_asr: f64,
    pub topical_share_autosum: f64,
    pub topical_share_synopsis: f64,
    pub words_asr: usize,
    pub words_autosum: usize,
    pub words_synopsis: usize,
    /// Emit AutoSum texts and embeddings; off leaves them for the `autosum` step.
    pub with_autosum: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 200,
            topics: 11,
            queries: 40,
            dim: 32,
            seed: 0,
            second_topic_prob: 0.2,
            noise_asr: 2.3,
            noise_autosum: 2.0,
            noise_synopsis: 1.6,
            topical_share_asr: 0.2,
            topical_share_autosum: 0.35,
            topical_share_synopsis: 0.5,
            words_asr: 60,
            words_autosum: 30,
            words_synopsis: 20,
            with_autosum: true,
        }
    }
}

impl SynthConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.docs < 2 {
            v.push("synth.docs must be at least 2".into());
        }
        if self.topics == 0 || self.topics > TOPIC_NAMES.len() {
            v.push(format!("synth.topics must be in 1..={}", TOPIC_NAMES.len()));
        }
        if self.queries == 0 || self.queries > self.docs {
            v.push("synth.queries must be in 1..=docs".into());
        }
        if self.dim == 0 {
            v.push("synth.dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.second_topic_prob) {
            v.push("synth.second_topic_prob must be in [0, 1]".into());
        }
        for (name, x) in [
            ("noise_asr", self.noise_asr),
            ("noise_autosum", self.noise_autosum),
            ("noise_synopsis", self.noise_synopsis),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("synth.{name} must be a non-negative number"));
            }
        }
        for (name, x) in [
            ("topical_share_asr", self.topical_share_asr),
            ("topical_share_autosum", self.topical_share_autosum),
            ("topical_share_synopsis", self.topical_share_synopsis),
        ] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("synth.{name} must be in [0, 1]"));
            }
        }
        if self.words_asr == 0 || self.words_autosum == 0 || self.words_synopsis == 0 {
            v.push("synth text lengths must be at least 1 word".into());
        }
        v
    }

    fn noise(&self, s: SourceKind) -> f64 {
        match s {
            SourceKind::Asr => self.noise_asr,
            SourceKind::AutoSum => self.noise_autosum,
            SourceKind::Synopsis => self.noise_synopsis,
        }
    }

    fn topical_share(&self, s: SourceKind) -> f64 {
        match s {
            SourceKind::Asr => self.topical_share_asr,
            SourceKind::AutoSum => self.topical_share_autosum,
            SourceKind::Synopsis => self.topical_share_synopsis,
        }
    }

    fn words(&self, s: SourceKind) -> usize {
        match s {
            SourceKind::Asr => self.words_asr,
            SourceKind::AutoSum => self.words_autosum,
            SourceKind::Synopsis => self.words_synopsis,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub embeddings: EmbeddingSet,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
        .collect()
}

fn vocabulary(rng: &mut ChaCha8Rng, size: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let w = pseudo_word(rng);
        if taken.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Generates a corpus, a query set and embeddings for every stored text.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topics = &TOPIC_NAMES[..cfg.topics];

    let centroids: Vec<Vec<f64>> = (0..cfg.topics)
        .map(|_| loop {
            if let Ok(c) = normalize(&gaussian(&mut rng, cfg.dim)) {
                break c;
            }
        })
        .collect();
    let mut taken = BTreeSet::new();
    let topic_vocab: Vec<Vec<String>> = (0..cfg.topics)
        .map(|_| vocabulary(&mut rng, 12, &mut taken))
        .collect();
    let filler = vocabulary(&mut rng, 60, &mut taken);

    let sources: Vec<SourceKind> = SourceKind::ALL
        .into_iter()
        .filter(|&s| cfg.with_autosum || s != SourceKind::AutoSum)
        .collect();
    let width = cfg.docs.to_string().len().max(4);

    let mut docs = Vec::with_capacity(cfg.docs);
    let mut primary = Vec::with_capacity(cfg.docs);
    let mut embeddings = EmbeddingSet::new(cfg.dim)?;
    for i in 0..cfg.docs {
        let id = format!("clip{i:0width$}");
        // round-robin primary topics keep every topic populated
        let t = i % cfg.topics;
        let second = (cfg.topics > 1 && rng.random_bool(cfg.second_topic_prob)).then(|| {
            let o = rng.random_range(0..cfg.topics - 1);
            if o >= t {
                o + 1
            } else {
                o
            }
        });
        let mut labels = BTreeSet::from([topics[t].to_string()]);
        if let Some(s) = second {
            labels.insert(topics[s].to_string());
        }

        let mut texts = BTreeMap::new();
        for &source in &sources {
            let mut v = centroids[t].clone();
            if let Some(s) = second {
                for (x, c) in v.iter_mut().zip(&centroids[s]) {
                    *x += 0.5 * c;
                }
            }
            let scale = cfg.noise(source) / (cfg.dim as f64).sqrt();
            for (x, g) in v.iter_mut().zip(gaussian(&mut rng, cfg.dim)) {
                *x += scale * g;
            }
            let vector = loop {
                match normalize(&v) {
                    Ok(u) => break u,
                    Err(_) => v = gaussian(&mut rng, cfg.dim),
                }
            };
            embeddings.insert(&EmbeddingRecord {
                doc_id: id.clone(),
                source,
                vector,
            })?;

            let mut words = vec![id.clone()];
            for _ in 0..cfg.words(source) {
                let w = if rng.random_bool(cfg.topical_share(source)) {
                    let vocab = match second {
                        Some(s) if rng.random_bool(0.3) => &topic_vocab[s],
                        _ => &topic_vocab[t],
                    };
                    vocab.choose(&mut rng)
                } else {
                    filler.choose(&mut rng)
                };
                words.push(w.expect("non-empty vocabulary").clone());
            }
            texts.insert(source, words.join(" "));
        }
        docs.push(Document {
            id,
            topics: labels,
            duration_s: Some(f64::from(rng.random_range(60u32..3600))),
            texts,
        });
        primary.push((t, second.is_none()));
    }

    let mut single: Vec<usize> = (0..cfg.docs).filter(|&i| primary[i].1).collect();
    if single.len() < cfg.queries {
        return Err(Error::InvalidArgument(format!(
            "only {} single-topic documents for {} queries",
            single.len(),
            cfg.queries
        )));
    }
    single.shuffle(&mut rng);
    let mut chosen = single[..cfg.queries].to_vec();
    chosen.sort_unstable();
    let queries = QuerySet {
        entries: chosen
            .into_iter()
            .map(|i| Query {
                id: docs[i].id.clone(),
                topic: topics[primary[i].0].to_string(),
            })
            .collect(),
    };

    Ok(SynthData {
        corpus: Corpus::from_documents(docs)?,
        queries,
        embeddings,
    })
}
