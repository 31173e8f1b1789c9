//! Document archive, query set, and topic-derived relevance judgments.
//!
//! The archive is stored as JSON-lines, one document per line:
//!
//! ```text
//! {"id":"d1","topics":["Health"],"duration_s":95.0,"texts":{"asr":"...","synopsis":"..."}}
//! ```
//!
//! Queries are JSON-lines of `{"id": <document id>, "topic": <label>}`. Relevance is
//! binary: a document is relevant to a query when the query topic is one of the
//! document's topics. A query is never judged against itself unless explicitly
//! requested.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which text representation of a recording is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Asr,
    AutoSum,
    Synopsis,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [SourceKind::Asr, SourceKind::AutoSum, SourceKind::Synopsis];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Asr => "asr",
            SourceKind::AutoSum => "autosum",
            SourceKind::Synopsis => "synopsis",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asr" => Ok(SourceKind::Asr),
            "autosum" => Ok(SourceKind::AutoSum),
            "synopsis" => Ok(SourceKind::Synopsis),
            other => Err(Error::UnknownSourceKind {
                token: other.to_string(),
                line: 0,
            }),
        }
    }
}

/// One archive item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub topics: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub texts: BTreeMap<SourceKind, String>,
}

impl Document {
    pub fn text(&self, kind: SourceKind) -> Option<&str> {
        self.texts.get(&kind).map(String::as_str)
    }

    fn validate(&self, line: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(parse_err("<corpus>", line, "document id is empty"));
        }
        if self.topics.is_empty() {
            return Err(Error::EmptyTopics {
                id: self.id.clone(),
                line,
            });
        }
        if let Some(d) = self.duration_s {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(parse_err(
                    "<corpus>",
                    line,
                    format!("document `{}` has invalid duration {d}", self.id),
                ));
            }
        }
        for (kind, text) in &self.texts {
            if text.trim().is_empty() {
                return Err(parse_err(
                    "<corpus>",
                    line,
                    format!("document `{}` has an empty `{kind}` text", self.id),
                ));
            }
        }
        Ok(())
    }
}

// Texts are read with string keys first so an unknown source token can be reported
// with its line number instead of a generic serde message.
#[derive(Deserialize)]
struct RawDocument {
    id: String,
    topics: Vec<String>,
    #[serde(default)]
    duration_s: Option<f64>,
    #[serde(default)]
    texts: BTreeMap<String, String>,
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Immutable, validated document archive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-constructed documents, checking every invariant.
    /// Line numbers in errors are 1-based positions in `docs`.
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        let mut first_line: HashMap<String, usize> = HashMap::new();
        for (i, doc) in docs.into_iter().enumerate() {
            corpus.push(doc, i + 1, &mut first_line)?;
        }
        Ok(corpus)
    }

    fn push(
        &mut self,
        doc: Document,
        line: usize,
        first_line: &mut HashMap<String, usize>,
    ) -> Result<()> {
        doc.validate(line)?;
        if let Some(&first) = first_line.get(&doc.id) {
            return Err(Error::DuplicateId {
                id: doc.id,
                line,
                first_line: first,
            });
        }
        first_line.insert(doc.id.clone(), line);
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn from_reader(reader: impl BufRead, path_label: &str) -> Result<Self> {
        let mut corpus = Corpus::default();
        let mut first_line = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path_label, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawDocument = serde_json::from_str(&line)
                .map_err(|e| parse_err(path_label, lineno, e.to_string()))?;
            let mut texts = BTreeMap::new();
            for (token, text) in raw.texts {
                let kind = token
                    .parse::<SourceKind>()
                    .map_err(|_| Error::UnknownSourceKind {
                        token: token.clone(),
                        line: lineno,
                    })?;
                texts.insert(kind, text);
            }
            let doc = Document {
                id: raw.id,
                topics: raw.topics.into_iter().collect(),
                duration_s: raw.duration_s,
                texts,
            };
            corpus.push(doc, lineno, &mut first_line)?;
        }
        Ok(corpus)
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for doc in &self.docs {
            serde_json::to_writer(&mut writer, doc)?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::io("<corpus>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    /// Text of `id` in the given source, or a `MissingText` error.
    pub fn text(&self, id: &str, kind: SourceKind) -> Result<&str> {
        let doc = self
            .get(id)
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))?;
        doc.text(kind).ok_or_else(|| Error::MissingText {
            id: id.to_string(),
            source_kind: kind.to_string(),
        })
    }

    /// Replaces one text of a document. The text must be non-empty after trimming.
    pub fn set_text(&mut self, id: &str, kind: SourceKind, text: String) -> Result<()> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "refusing to store an empty `{kind}` text for `{id}`"
            )));
        }
        let idx = *self
            .by_id
            .get(id)
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))?;
        self.docs[idx].texts.insert(kind, text);
        Ok(())
    }

    pub fn topic_histogram(&self) -> BTreeMap<String, usize> {
        let mut hist = BTreeMap::new();
        for doc in &self.docs {
            for t in &doc.topics {
                *hist.entry(t.clone()).or_insert(0) += 1;
            }
        }
        hist
    }

    pub fn source_histogram(&self) -> BTreeMap<SourceKind, usize> {
        let mut hist: BTreeMap<SourceKind, usize> =
            SourceKind::ALL.iter().map(|&k| (k, 0)).collect();
        for doc in &self.docs {
            for kind in doc.texts.keys() {
                *hist.entry(*kind).or_insert(0) += 1;
            }
        }
        hist
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_reader(BufReader::new(file), &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub topic: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuerySet {
    pub entries: Vec<Query>,
}

impl QuerySet {
    pub fn from_reader(reader: impl BufRead, path_label: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path_label, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let q: Query = serde_json::from_str(&line)
                .map_err(|e| parse_err(path_label, lineno, e.to_string()))?;
            if q.topic.trim().is_empty() {
                return Err(parse_err(
                    path_label,
                    lineno,
                    format!("query `{}` has an empty topic", q.id),
                ));
            }
            if let Some(first) = seen.insert(q.id.clone(), lineno) {
                return Err(Error::DuplicateId {
                    id: q.id,
                    line: lineno,
                    first_line: first,
                });
            }
            entries.push(q);
        }
        Ok(QuerySet { entries })
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for q in &self.entries {
            serde_json::to_writer(&mut writer, q)?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::io("<queries>", e))?;
        }
        Ok(())
    }

    /// Every query id must name a corpus document.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        match self.entries.iter().find(|q| !corpus.contains(&q.id)) {
            Some(q) => Err(Error::UnknownQuery(q.id.clone())),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    QuerySet::from_reader(BufReader::new(file), &path.display().to_string())
}

/// Binary relevance judgments keyed by query, then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u8>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, gain: u8) {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), gain);
    }

    /// Gain of `doc_id` for `query_id`; unjudged pairs count as 0.
    pub fn gain(&self, query_id: &str, doc_id: &str) -> u8 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u8>> {
        self.judgments.get(query_id)
    }

    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map_or(0, |m| m.values().filter(|&&g| g > 0).count())
    }

    /// All judged gains for a query, in no particular order.
    pub fn gains(&self, query_id: &str) -> Vec<u8> {
        self.judgments
            .get(query_id)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Writes `query_id 0 doc_id gain` lines sorted by query then document.
    pub fn write_trec(&self, mut writer: impl Write) -> Result<()> {
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                writeln!(writer, "{q} 0 {d} {g}").map_err(|e| Error::io("<qrels>", e))?;
            }
        }
        Ok(())
    }

    pub fn from_trec_reader(reader: impl BufRead, path_label: &str) -> Result<Self> {
        let mut qrels = Qrels::default();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path_label, e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(parse_err(
                    path_label,
                    lineno,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let gain: u8 = match fields[3] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(parse_err(
                        path_label,
                        lineno,
                        format!("relevance gain must be 0 or 1, found `{other}`"),
                    ))
                }
            };
            qrels.insert(fields[0], fields[2], gain);
        }
        Ok(qrels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_trec(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Qrels::from_trec_reader(BufReader::new(file), &path.display().to_string())
}

/// Judges every corpus document against every query by topic membership.
/// The query document itself is left unjudged.
pub fn derive_qrels(corpus: &Corpus, queries: &QuerySet) -> Result<Qrels> {
    derive_qrels_with(corpus, queries, false)
}

pub fn derive_qrels_with(corpus: &Corpus, queries: &QuerySet, include_self: bool) -> Result<Qrels> {
    queries.validate_against(corpus)?;
    let mut qrels = Qrels::default();
    for q in &queries.entries {
        let judged = qrels.judgments.entry(q.id.clone()).or_default();
        for doc in corpus.documents() {
            if doc.id == q.id && !include_self {
                continue;
            }
            judged.insert(doc.id.clone(), u8::from(doc.topics.contains(&q.topic)));
        }
    }
    Ok(qrels)
}
