//! Ranking metrics over binary relevance: nDCG@k, Precision@k and the
//! oracle precision of a candidate window.
//!
//! DCG uses linear gain `g / log2(i + 1)`. The ideal DCG is taken over every judged
//! document of the query by default, so a first stage that misses relevant
//! documents caps what reranking can reach.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::run::RankedList;

/// Where the ideal ranking for nDCG draws its gains from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdcgPool {
    /// Every judged document for the query.
    #[default]
    Corpus,
    /// Only documents present in the evaluated run.
    Window,
}

impl FromStr for IdcgPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(IdcgPool::Corpus),
            "window" => Ok(IdcgPool::Window),
            other => Err(Error::InvalidArgument(format!("unknown IDCG pool `{other}`"))),
        }
    }
}

fn check_cutoff(run: &RankedList, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff k must be at least 1".into()));
    }
    if run.len() < k {
        return Err(Error::RunTooShort {
            query_id: run.query_id.clone(),
            len: run.len(),
            k,
        });
    }
    Ok(())
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

pub fn precision_at_k(run: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_cutoff(run, k)?;
    let hits = run
        .head(k)
        .iter()
        .filter(|it| qrels.gain(&run.query_id, &it.doc_id) > 0)
        .count();
    Ok(hits as f64 / k as f64)
}

pub fn ndcg_at_k(run: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    ndcg_at_k_with(run, qrels, k, IdcgPool::Corpus)
}

/// nDCG@k; 0 when the pool holds no relevant document.
pub fn ndcg_at_k_with(run: &RankedList, qrels: &Qrels, k: usize, pool: IdcgPool) -> Result<f64> {
    check_cutoff(run, k)?;
    let q = &run.query_id;
    let dcg: f64 = run
        .head(k)
        .iter()
        .enumerate()
        .map(|(i, it)| f64::from(qrels.gain(q, &it.doc_id)) * discount(i + 1))
        .sum();
    let mut ideal: Vec<u8> = match pool {
        IdcgPool::Corpus => qrels.gains(q),
        IdcgPool::Window => run.doc_ids().map(|d| qrels.gain(q, d)).collect(),
    };
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) * discount(i + 1))
        .sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Best Precision@k reachable by reordering the first `window` items:
/// `min(k, R) / k` with `R` relevant documents inside the window.
pub fn oracle_precision(
    first_stage: &RankedList,
    qrels: &Qrels,
    window: usize,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff k must be at least 1".into()));
    }
    if k > window {
        return Err(Error::InvalidArgument(format!(
            "cutoff {k} exceeds the reranking window {window}"
        )));
    }
    if first_stage.len() < window {
        return Err(Error::RunTooShort {
            query_id: first_stage.query_id.clone(),
            len: first_stage.len(),
            k: window,
        });
    }
    let relevant = first_stage
        .head(window)
        .iter()
        .filter(|it| qrels.gain(&first_stage.query_id, &it.doc_id) > 0)
        .count();
    Ok(relevant.min(k) as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    Ndcg { k: usize },
    Precision { k: usize },
    OraclePrecision { window: usize, k: usize },
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg { k } => write!(f, "nDCG@{k}"),
            Metric::Precision { k } => write!(f, "P@{k}"),
            Metric::OraclePrecision { window, k } => write!(f, "oracleP@{k}/{window}"),
        }
    }
}

impl Metric {
    pub fn compute(&self, run: &RankedList, qrels: &Qrels, pool: IdcgPool) -> Result<f64> {
        match *self {
            Metric::Ndcg { k } => ndcg_at_k_with(run, qrels, k, pool),
            Metric::Precision { k } => precision_at_k(run, qrels, k),
            Metric::OraclePrecision { window, k } => oracle_precision(run, qrels, window, k),
        }
    }
}

/// nDCG@{3,5,10} and Precision@{1,3,5}.
pub fn default_metrics() -> Vec<Metric> {
    vec![
        Metric::Ndcg { k: 3 },
        Metric::Ndcg { k: 5 },
        Metric::Ndcg { k: 10 },
        Metric::Precision { k: 1 },
        Metric::Precision { k: 3 },
        Metric::Precision { k: 5 },
    ]
}

pub fn oracle_metrics(window: usize, ks: &[usize]) -> Vec<Metric> {
    ks.iter()
        .map(|&k| Metric::OraclePrecision { window, k })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub values: Vec<f64>,
    /// The query has no relevant judged document; its nDCG is reported as 0.
    pub no_relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub metrics: Vec<Metric>,
    pub per_query: Vec<QueryMetrics>,
    /// Macro average over queries.
    pub mean: Vec<f64>,
}

/// Scores every run against the qrels. Every run query must be judged.
pub fn evaluate_run(
    runs: &[RankedList],
    qrels: &Qrels,
    metrics: &[Metric],
    pool: IdcgPool,
) -> Result<MetricTable> {
    let missing: Vec<String> = runs
        .iter()
        .filter(|r| !qrels.contains_query(&r.query_id))
        .map(|r| r.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingQueries(missing));
    }
    let mut seen = HashSet::new();
    let mut per_query = Vec::with_capacity(runs.len());
    for run in runs {
        if !seen.insert(run.query_id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "query `{}` appears in more than one run",
                run.query_id
            )));
        }
        let values = metrics
            .iter()
            .map(|m| m.compute(run, qrels, pool))
            .collect::<Result<Vec<_>>>()?;
        per_query.push(QueryMetrics {
            query_id: run.query_id.clone(),
            values,
            no_relevant: qrels.relevant_count(&run.query_id) == 0,
        });
    }
    let mean = (0..metrics.len())
        .map(|j| {
            if per_query.is_empty() {
                0.0
            } else {
                per_query.iter().map(|q| q.values[j]).sum::<f64>() / per_query.len() as f64
            }
        })
        .collect();
    Ok(MetricTable {
        metrics: metrics.to_vec(),
        per_query,
        mean,
    })
}

impl MetricTable {
    pub fn mean_of(&self, metric: Metric) -> Option<f64> {
        self.metrics
            .iter()
            .position(|m| *m == metric)
            .map(|i| self.mean[i])
    }

    /// Header, one row per query, then a `mean` row. Values to 4 decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query");
        for m in &self.metrics {
            out.push('\t');
            out.push_str(&m.to_string());
        }
        out.push_str("\tno_relevant\n");
        for q in &self.per_query {
            out.push_str(&q.query_id);
            for v in &q.values {
                out.push_str(&format!("\t{v:.4}"));
            }
            out.push_str(if q.no_relevant { "\t1\n" } else { "\t0\n" });
        }
        out.push_str("mean");
        for v in &self.mean {
            out.push_str(&format!("\t{v:.4}"));
        }
        let flagged = self.per_query.iter().filter(|q| q.no_relevant).count();
        out.push_str(&format!("\t{flagged}\n"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::Stage;

    fn run_with_gains(q: &str, gains: &[u8], extra_relevant: usize) -> (RankedList, Qrels) {
        let mut qrels = Qrels::default();
        let list = RankedList::from_scored(
            q,
            Stage::Retrieval,
            gains
                .iter()
                .enumerate()
                .map(|(i, _)| (format!("d{i}"), 1.0 - i as f64 * 0.01)),
        );
        for (i, &g) in gains.iter().enumerate() {
            qrels.insert(q, &format!("d{i}"), g);
        }
        for j in 0..extra_relevant {
            qrels.insert(q, &format!("unretrieved{j}"), 1);
        }
        (list, qrels)
    }

    #[test]
    fn precision_examples() {
        let (run, qrels) = run_with_gains("q", &[1, 0, 1, 0, 0], 0);
        assert!((precision_at_k(&run, &qrels, 5).unwrap() - 0.4).abs() < 1e-12);
        let (run, qrels) = run_with_gains("q", &[1, 1, 1], 0);
        assert_eq!(precision_at_k(&run, &qrels, 3).unwrap(), 1.0);
        let (run, qrels) = run_with_gains("q", &[1, 1], 0);
        assert!(matches!(
            precision_at_k(&run, &qrels, 3),
            Err(Error::RunTooShort { len: 2, k: 3, .. })
        ));
        assert!(precision_at_k(&run, &qrels, 0).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let (run, qrels) = run_with_gains("q", &[1, 1, 1], 2);
        assert!((ndcg_at_k(&run, &qrels, 3).unwrap() - 1.0).abs() < 1e-12);

        // DCG = 1/log2(3) + 1/log2(4) = 1.1309; IDCG = 1 + 1/log2(3) = 1.6309
        let (run, qrels) = run_with_gains("q", &[0, 1, 1], 0);
        let v = ndcg_at_k(&run, &qrels, 3).unwrap();
        assert!((v - 0.6934).abs() < 1e-4, "{v}");

        let (run, qrels) = run_with_gains("q", &[0, 0, 0], 0);
        assert_eq!(ndcg_at_k(&run, &qrels, 3).unwrap(), 0.0);
    }

    #[test]
    fn window_pool_ignores_unretrieved() {
        let (run, qrels) = run_with_gains("q", &[0, 1, 0], 3);
        let corpus = ndcg_at_k_with(&run, &qrels, 3, IdcgPool::Corpus).unwrap();
        let window = ndcg_at_k_with(&run, &qrels, 3, IdcgPool::Window).unwrap();
        assert!(window > corpus);
        assert!((window - 1.0 / 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let mut gains = vec![0u8; 10];
        for i in [1, 4, 7, 9] {
            gains[i] = 1;
        }
        let (run, qrels) = run_with_gains("q", &gains, 0);
        assert_eq!(oracle_precision(&run, &qrels, 10, 3).unwrap(), 1.0);
        let mut gains = vec![0u8; 10];
        gains[6] = 1;
        let (run, qrels) = run_with_gains("q", &gains, 0);
        assert!((oracle_precision(&run, &qrels, 10, 3).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(oracle_precision(&run, &qrels, 10, 11).is_err());
    }

    #[test]
    fn evaluate_two_queries() {
        // q1 gains [1,0,1,0,0,1,0,0,0,0], q2 gains [0,1,0,...]
        let mut g1 = vec![0u8; 10];
        g1[0] = 1;
        g1[2] = 1;
        g1[5] = 1;
        let mut g2 = vec![0u8; 10];
        g2[1] = 1;
        let (r1, mut qrels) = run_with_gains("q1", &g1, 0);
        let (r2, q2) = run_with_gains("q2", &g2, 0);
        for (d, g) in q2.judged("q2").unwrap() {
            qrels.insert("q2", d, *g);
        }
        let t = evaluate_run(&[r1, r2], &qrels, &default_metrics(), IdcgPool::Corpus).unwrap();
        // P@1: q1 = 1, q2 = 0 -> 0.5. P@3: q1 = 2/3, q2 = 1/3 -> 0.5
        assert_eq!(t.mean_of(Metric::Precision { k: 1 }), Some(0.5));
        assert!((t.mean_of(Metric::Precision { k: 3 }).unwrap() - 0.5).abs() < 1e-12);
        // nDCG@3 q2 = (1/log2 3) / 1
        let l = |x: f64| x.log2();
        let q1 = (1.0 + 1.0 / l(4.0)) / (1.0 + 1.0 / l(3.0) + 1.0 / l(4.0));
        let q2 = 1.0 / l(3.0);
        assert!((t.mean_of(Metric::Ndcg { k: 3 }).unwrap() - (q1 + q2) / 2.0).abs() < 1e-12);
        let tsv = t.to_tsv();
        assert!(tsv.starts_with("query\tnDCG@3\tnDCG@5\tnDCG@10\tP@1\tP@3\tP@5\tno_relevant\n"));
        assert!(tsv.contains("\nmean\t"));
    }

    #[test]
    fn evaluate_lists_missing_queries() {
        let (r1, qrels) = run_with_gains("q1", &[1], 0);
        let (r2, _) = run_with_gains("x", &[1], 0);
        let (r3, _) = run_with_gains("y", &[1], 0);
        match evaluate_run(&[r1, r2, r3], &qrels, &[Metric::Precision { k: 1 }], IdcgPool::Corpus) {
            Err(Error::MissingQueries(ids)) => assert_eq!(ids, vec!["x", "y"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flags_queries_without_relevant_docs() {
        let (r, qrels) = run_with_gains("q", &[0, 0, 0], 0);
        let t = evaluate_run(&[r], &qrels, &[Metric::Ndcg { k: 3 }], IdcgPool::Corpus).unwrap();
        assert!(t.per_query[0].no_relevant);
        assert_eq!(t.per_query[0].values[0], 0.0);
    }
}
