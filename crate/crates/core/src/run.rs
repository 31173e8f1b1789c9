//! Ranked candidate lists and TREC run files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which stage produced a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Retrieval,
    RerankListwise,
    RerankPairwise,
    RerankLexical,
    Oracle,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Retrieval => "retrieval",
            Stage::RerankListwise => "rerank-listwise",
            Stage::RerankPairwise => "rerank-pairwise",
            Stage::RerankLexical => "rerank-lexical",
            Stage::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "retrieval" => Stage::Retrieval,
            "rerank-listwise" => Stage::RerankListwise,
            "rerank-pairwise" => Stage::RerankPairwise,
            "rerank-lexical" => Stage::RerankLexical,
            "oracle" => Stage::Oracle,
            other => return Err(Error::InvalidArgument(format!("unknown stage `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub stage: Stage,
    pub items: Vec<RankedItem>,
}

impl RankedList {
    /// Assigns ranks 1..n in the given order.
    pub fn from_scored(
        query_id: impl Into<String>,
        stage: Stage,
        scored: impl IntoIterator<Item = (String, f64)>,
    ) -> Self {
        let items = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RankedItem {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        RankedList {
            query_id: query_id.into(),
            stage,
            items,
        }
    }

    /// Ranking from an ordered id list, scored `n - rank + 1` so that score order
    /// and rank order agree for tools that sort by score.
    pub fn from_order(
        query_id: impl Into<String>,
        stage: Stage,
        order: impl IntoIterator<Item = String>,
    ) -> Self {
        let ids: Vec<String> = order.into_iter().collect();
        let n = ids.len();
        Self::from_scored(
            query_id,
            stage,
            ids.into_iter()
                .enumerate()
                .map(|(i, id)| (id, (n - i) as f64)),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|it| it.doc_id.as_str())
    }

    pub fn head(&self, n: usize) -> &[RankedItem] {
        &self.items[..n.min(self.items.len())]
    }

    /// Checks contiguous ranks, distinct ids, and (for retrieval) non-increasing scores.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.items.len());
        for (i, it) in self.items.iter().enumerate() {
            if it.rank != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "query `{}`: rank {} at position {}",
                    self.query_id,
                    it.rank,
                    i + 1
                )));
            }
            if !seen.insert(it.doc_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "query `{}`: document `{}` ranked twice",
                    self.query_id, it.doc_id
                )));
            }
        }
        if self.stage == Stage::Retrieval {
            if let Some(w) = self.items.windows(2).find(|w| w[1].score > w[0].score) {
                return Err(Error::InvalidArgument(format!(
                    "query `{}`: retrieval score increases at `{}`",
                    self.query_id, w[1].doc_id
                )));
            }
        }
        Ok(())
    }
}

/// Writes `query_id Q0 doc_id rank score tag`; the tag is the stage name.
pub fn write_run(mut writer: impl Write, lists: &[RankedList]) -> Result<()> {
    for list in lists {
        for it in &list.items {
            writeln!(
                writer,
                "{} Q0 {} {} {:.6} {}",
                list.query_id, it.doc_id, it.rank, it.score, list.stage
            )
            .map_err(|e| Error::io("<run>", e))?;
        }
    }
    Ok(())
}

pub fn save_run(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_run(&mut w, lists)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a run file. Queries keep their first-appearance order; items are ordered by
/// the rank column. Unrecognized tags are read as retrieval runs.
pub fn read_run(reader: impl BufRead, path_label: &str) -> Result<Vec<RankedList>> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path_label, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path_label.to_string(),
            line: lineno,
            message: msg,
        };
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| bad(format!("bad rank `{}`", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| bad(format!("bad score `{}`", f[4])))?;
        let stage = f[5].parse().unwrap_or(Stage::Retrieval);
        let slot = *index.entry(f[0].to_string()).or_insert_with(|| {
            lists.push(RankedList {
                query_id: f[0].to_string(),
                stage,
                items: Vec::new(),
            });
            lists.len() - 1
        });
        lists[slot].items.push(RankedItem {
            doc_id: f[2].to_string(),
            score,
            rank,
        });
    }
    for list in &mut lists {
        list.items.sort_by_key(|it| it.rank);
        for (i, it) in list.items.iter_mut().enumerate() {
            it.rank = i + 1;
        }
    }
    Ok(lists)
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_run(BufReader::new(file), &path.display().to_string())
}
