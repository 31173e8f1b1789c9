//! Unit-normalized topic embeddings and exact cosine top-k retrieval.
//!
//! Embedding files are JSON-lines with a header:
//!
//! ```text
//! {"dim": 4}
//! {"doc_id": "d1", "source": "asr", "vector": [0.1, 0.2, 0.3, 0.4]}
//! ```
//!
//! Vectors are normalized on insertion. Retrieval is a brute-force scan; ties on
//! score are broken by ascending document id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SourceKind;
use crate::error::{Error, Result};
use crate::run::{RankedList, Stage};

pub const UNIT_TOLERANCE: f64 = 1e-6;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::InvalidArgument("vector has non-finite entries".into()));
    }
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub doc_id: String,
    pub source: SourceKind,
    pub vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
}

/// Flat row-major store of vectors for one source kind.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    source: SourceKind,
    ids: Vec<String>,
    data: Vec<f64>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize, source: SourceKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingIndex {
            dim,
            source,
            ids: Vec::new(),
            data: Vec::new(),
            by_id: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> SourceKind {
        self.source
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Normalizes and stores `vector` for `doc_id`. Re-inserting an id is an error.
    pub fn insert(&mut self, doc_id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let doc_id = doc_id.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if self.by_id.contains_key(&doc_id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate `{}` embedding for `{doc_id}`",
                self.source
            )));
        }
        let unit = normalize(vector)?;
        self.by_id.insert(doc_id.clone(), self.ids.len());
        self.ids.push(doc_id);
        self.data.extend_from_slice(&unit);
        Ok(())
    }

    pub fn vector(&self, doc_id: &str) -> Option<&[f64]> {
        self.by_id.get(doc_id).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Exact top-`k` by cosine similarity.
    pub fn retrieve(&self, query_id: &str, query: &[f64], k: usize) -> Result<RankedList> {
        self.retrieve_filtered(query_id, query, k, |_| true)
    }

    /// Like [`retrieve`](Self::retrieve) but only over documents accepted by `keep`.
    pub fn retrieve_filtered(
        &self,
        query_id: &str,
        query: &[f64],
        k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::InvalidArgument("cannot retrieve from an empty index".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let qn = norm(query);
        if (qn - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "query vector must be unit length (norm {qn})"
            )));
        }

        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| keep(&self.ids[i]))
            .map(|i| (i, dot(query, self.row(i)).clamp(-1.0, 1.0)))
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);

        Ok(RankedList::from_scored(
            query_id,
            Stage::Retrieval,
            scored.into_iter().map(|(i, s)| (self.ids[i].clone(), s)),
        ))
    }
}

/// All embeddings from one file, split by source kind.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dim: usize,
    indexes: BTreeMap<SourceKind, EmbeddingIndex>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingSet {
            dim,
            indexes: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, record: &EmbeddingRecord) -> Result<()> {
        let dim = self.dim;
        let index = match self.indexes.entry(record.source) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(EmbeddingIndex::new(dim, record.source)?)
            }
        };
        index.insert(record.doc_id.clone(), &record.vector)
    }

    pub fn index(&self, source: SourceKind) -> Option<&EmbeddingIndex> {
        self.indexes.get(&source)
    }

    pub fn sources(&self) -> impl Iterator<Item = SourceKind> + '_ {
        self.indexes.keys().copied()
    }

    pub fn from_reader(reader: impl BufRead, path_label: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, message: String| Error::Parse {
            path: path_label.to_string(),
            line,
            message,
        };
        let header: Header = loop {
            match lines.next() {
                None => return Err(bad(1, "missing {\"dim\": d} header".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io(path_label, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line)
                        .map_err(|e| bad(i + 1, format!("bad header: {e}")))?;
                }
            }
        };
        let mut set = EmbeddingSet::new(header.dim)?;
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path_label, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord =
                serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            set.insert(&rec).map_err(|e| bad(i + 1, e.to_string()))?;
        }
        Ok(set)
    }

    /// Writes the header and then every vector, grouped by source and in insertion order.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<embeddings>", e);
        serde_json::to_writer(&mut w, &Header { dim: self.dim })?;
        w.write_all(b"\n").map_err(io)?;
        for index in self.indexes.values() {
            for (i, id) in index.ids.iter().enumerate() {
                let rec = EmbeddingRecord {
                    doc_id: id.clone(),
                    source: index.source,
                    vector: index.row(i).to_vec(),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n").map_err(io)?;
            }
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
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingSet::from_reader(BufReader::new(file), &path.display().to_string())
}
