//! Stage orchestration over files in an output directory.
//!
//! Each stage reads its inputs from disk and writes its artifacts next to a
//! `<artifact>.manifest.json` recording the config hash, seed, backend identity and
//! digests of the inputs. Manifests carry no timestamps, so identical inputs give
//! byte-identical outputs. [`Session::run_pipeline`] is the stages run in sequence;
//! with `resume` it skips stages whose manifests still match.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autosum::{summarize_corpus, AutosumReport};
use crate::backend::{Backend, RemoteEmbedder};
use crate::config::Config;
use crate::corpus::{derive_qrels_with, load_corpus, load_queries, load_qrels, Corpus, Qrels, QuerySet, SourceKind};
use crate::embedding::{load_embeddings, EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, Result};
use crate::factcheck::{consistency_report, ConsistencyReport};
use crate::metrics::{evaluate_run, MetricTable};
use crate::rerank::{rerank_query, ComparisonOutcome, Strategy};
use crate::run::{load_run, write_run, RankedList};

pub const QRELS_FILE: &str = "qrels.txt";
pub const INGEST_FILE: &str = "ingest.json";
pub const AUTOSUM_REPORT_FILE: &str = "autosum.report.json";
pub const RETRIEVAL_RUN: &str = "retrieval.run";
pub const COMPARISONS_FILE: &str = "comparisons.jsonl";

pub fn rerank_run_name(strategy: Strategy) -> String {
    format!("rerank.{strategy}.run")
}

pub fn rerank_log_name(strategy: Strategy) -> String {
    format!("rerank.{strategy}.queries.jsonl")
}

/// `metrics.<run stem>.tsv` for a run file name like `retrieval.run`.
pub fn metrics_name(run_file: &str, ext: &str) -> String {
    let stem = run_file.strip_suffix(".run").unwrap_or(run_file);
    format!("metrics.{stem}.{ext}")
}

pub fn factcheck_name(h: SourceKind, e: SourceKind, ext: &str) -> String {
    format!("factcheck.{h}-{e}.{ext}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub backend: Option<String>,
    /// SHA-256 of every input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Write-then-rename so a crash never leaves a truncated artifact behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, &it)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub topics: BTreeMap<String, usize>,
    pub texts: BTreeMap<SourceKind, usize>,
    pub queries: usize,
    pub embedding_dim: usize,
    pub embeddings: BTreeMap<SourceKind, usize>,
    pub relevant_judgments: usize,
}

/// Per-query record of a rerank stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankLogEntry {
    pub query_id: String,
    pub window: Vec<(String, f64)>,
    pub disagreement_rate: Option<f64>,
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankSummary {
    pub runs: Vec<RankedList>,
    pub comparisons: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub ingest: IngestSummary,
    pub autosum: Option<AutosumReport>,
    pub retrieval: MetricTable,
    pub rerank: MetricTable,
    /// Stages skipped because their artifacts were current.
    pub skipped: Vec<String>,
}

/// A validated configuration plus the backend it resolves to.
pub struct Session {
    config: Config,
    hash: String,
    backend: Option<Arc<dyn Backend>>,
}

impl Session {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Session {
            config,
            hash,
            backend: None,
        })
    }

    /// Uses `backend` for every LLM call instead of the configured one.
    pub fn with_backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.paths.out_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        load_corpus(&self.config.paths.corpus)
    }

    pub fn queries(&self) -> Result<QuerySet> {
        load_queries(&self.config.paths.queries)
    }

    pub fn embeddings(&self) -> Result<EmbeddingSet> {
        load_embeddings(&self.config.paths.embeddings)
    }

    pub fn backend(&self, corpus: &Corpus, queries: &QuerySet) -> Result<Arc<dyn Backend>> {
        match &self.backend {
            Some(b) => Ok(Arc::clone(b)),
            None => Ok(Arc::from(self.config.build_backend(corpus, queries)?)),
        }
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(self.out_dir()).map_err(|e| Error::io(self.out_dir(), e))
    }

    fn inputs(&self, roles: &[(&str, &Path)]) -> Result<BTreeMap<String, String>> {
        roles
            .iter()
            .map(|(role, p)| Ok((role.to_string(), file_digest(p)?)))
            .collect()
    }

    fn manifest(
        &self,
        artifact: &str,
        stage: &str,
        backend: Option<&dyn Backend>,
        inputs: BTreeMap<String, String>,
    ) -> Manifest {
        Manifest {
            artifact: artifact.to_string(),
            stage: stage.to_string(),
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            backend: backend.map(|b| b.identity()),
            inputs,
        }
    }

    fn write(&self, name: &str, bytes: &[u8], manifest: &Manifest) -> Result<PathBuf> {
        let path = self.artifact(name);
        write_atomic(&path, bytes)?;
        write_atomic(&manifest_path(&path), &to_json_pretty(manifest)?)?;
        Ok(path)
    }

    /// True when `name` exists and its manifest matches the current config and the
    /// digests of `roles`.
    pub fn is_current(&self, name: &str, roles: &[(&str, &Path)]) -> bool {
        let path = self.artifact(name);
        if !path.exists() {
            return false;
        }
        let Ok(text) = fs::read_to_string(manifest_path(&path)) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
            return false;
        };
        m.config_hash == self.hash && self.inputs(roles).is_ok_and(|i| i == m.inputs)
    }

    fn qrels_for(&self, corpus: &Corpus, queries: &QuerySet) -> Result<Qrels> {
        match &self.config.paths.qrels {
            Some(p) => load_qrels(p),
            None => derive_qrels_with(corpus, queries, self.config.retrieval.include_self),
        }
    }

    fn base_roles(&self) -> Vec<(&'static str, &Path)> {
        let p = &self.config.paths;
        let mut roles = vec![
            ("corpus", p.corpus.as_path()),
            ("queries", p.queries.as_path()),
            ("embeddings", p.embeddings.as_path()),
        ];
        if let Some(q) = &p.qrels {
            roles.push(("qrels", q.as_path()));
        }
        roles
    }

    /// Loads and cross-checks corpus, queries, embeddings and judgments; writes the
    /// judgments and a summary to the output directory.
    pub fn ingest(&self) -> Result<IngestSummary> {
        let corpus = self.corpus()?;
        let queries = self.queries()?;
        queries.validate_against(&corpus)?;
        let embeddings = self.embeddings()?;
        let mut counts = BTreeMap::new();
        for source in embeddings.sources() {
            let index = embeddings.index(source).expect("listed source");
            if let Some(id) = index.ids().iter().find(|id| !corpus.contains(id)) {
                return Err(Error::UnknownDocument(format!("{id} (in {source} embeddings)")));
            }
            counts.insert(source, index.len());
        }
        let qrels = self.qrels_for(&corpus, &queries)?;
        let missing: Vec<String> = queries
            .entries
            .iter()
            .filter(|q| !qrels.contains_query(&q.id))
            .map(|q| q.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingQueries(missing));
        }

        let summary = IngestSummary {
            documents: corpus.len(),
            topics: corpus.topic_histogram(),
            texts: corpus.source_histogram(),
            queries: queries.len(),
            embedding_dim: embeddings.dim(),
            embeddings: counts,
            relevant_judgments: qrels.query_ids().map(|q| qrels.relevant_count(q)).sum(),
        };
        self.ensure_out_dir()?;
        let inputs = self.inputs(&self.base_roles())?;
        let mut trec = Vec::new();
        qrels.write_trec(&mut trec)?;
        self.write(QRELS_FILE, &trec, &self.manifest(QRELS_FILE, "ingest", None, inputs.clone()))?;
        self.write(
            INGEST_FILE,
            &to_json_pretty(&summary)?,
            &self.manifest(INGEST_FILE, "ingest", None, inputs),
        )?;
        log::info!(
            "ingested {} documents, {} queries, {} topics",
            summary.documents,
            summary.queries,
            summary.topics.len()
        );
        Ok(summary)
    }

    /// Computes embeddings for `sources` through the remote embedding endpoint and
    /// adds them to the embeddings file. Documents that already have a vector for a
    /// source are left alone.
    pub fn embed(&self, sources: &[SourceKind]) -> Result<usize> {
        let corpus = self.corpus()?;
        let path = &self.config.paths.embeddings;
        let mut set = if path.exists() { Some(load_embeddings(path)?) } else { None };
        let embedder = RemoteEmbedder::new(self.config.backend.remote.clone())?;
        let mut added = 0;
        for &source in sources {
            let todo: Vec<(String, String)> = corpus
                .documents()
                .iter()
                .filter(|d| {
                    set.as_ref()
                        .and_then(|s| s.index(source))
                        .is_none_or(|i| i.vector(&d.id).is_none())
                })
                .filter_map(|d| Some((d.id.clone(), d.text(source)?.to_string())))
                .collect();
            for batch in todo.chunks(64) {
                let texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
                let vectors = embedder.embed(&texts)?;
                for ((id, _), vector) in batch.iter().zip(vectors) {
                    let s = match &mut set {
                        Some(s) => s,
                        None => set.insert(EmbeddingSet::new(vector.len())?),
                    };
                    s.insert(&EmbeddingRecord {
                        doc_id: id.clone(),
                        source,
                        vector,
                    })?;
                    added += 1;
                }
            }
        }
        if let Some(set) = set {
            set.save(path)?;
        }
        Ok(added)
    }

    /// Whether any configured stage reads AutoSum text that some document lacks.
    pub fn autosum_needed(&self, corpus: &Corpus) -> bool {
        let c = &self.config;
        let uses = [c.rerank.query_source, c.rerank.doc_source]
            .contains(&SourceKind::AutoSum);
        uses && corpus.documents().iter().any(|d| {
            d.text(SourceKind::Asr).is_some() && d.text(SourceKind::AutoSum).is_none()
        })
    }

    /// Adds AutoSum texts to the corpus file in place.
    pub fn autosum(&self) -> Result<AutosumReport> {
        let mut corpus = self.corpus()?;
        let queries = self.queries()?;
        let backend = self.backend(&corpus, &queries)?;
        let inputs = self.inputs(&[("corpus", &self.config.paths.corpus)])?;
        let report = summarize_corpus(
            &mut corpus,
            &*backend,
            &self.config.autosum.options()?,
            self.config.autosum.force,
        )?;
        for (id, why) in &report.failures {
            log::warn!("no AutoSum for `{id}`: {why}");
        }
        let mut bytes = Vec::new();
        corpus.write_jsonl(&mut bytes)?;
        write_atomic(&self.config.paths.corpus, &bytes)?;
        self.ensure_out_dir()?;
        self.write(
            AUTOSUM_REPORT_FILE,
            &to_json_pretty(&report)?,
            &self.manifest(AUTOSUM_REPORT_FILE, "autosum", Some(&*backend), inputs),
        )?;
        Ok(report)
    }

    /// First stage for every query, in query-file order.
    pub fn retrieve(&self) -> Result<Vec<RankedList>> {
        let queries = self.queries()?;
        let embeddings = self.embeddings()?;
        let r = &self.config.retrieval;
        let archive = embeddings.index(r.archive_source).ok_or_else(|| {
            Error::InvalidArgument(format!("no `{}` embeddings in the archive", r.archive_source))
        })?;
        let query_index = embeddings.index(r.query_source).ok_or_else(|| {
            Error::InvalidArgument(format!("no `{}` embeddings for queries", r.query_source))
        })?;
        let runs: Vec<RankedList> = queries
            .entries
            .par_iter()
            .map(|q| {
                let v = query_index.vector(&q.id).ok_or_else(|| Error::MissingText {
                    id: q.id.clone(),
                    source_kind: r.query_source.to_string(),
                })?;
                archive.retrieve_filtered(&q.id, v, r.k, |d| r.include_self || d != q.id)
            })
            .collect::<Result<_>>()?;

        self.ensure_out_dir()?;
        let inputs = self.inputs(&[
            ("queries", &self.config.paths.queries),
            ("embeddings", &self.config.paths.embeddings),
        ])?;
        let mut bytes = Vec::new();
        write_run(&mut bytes, &runs)?;
        self.write(RETRIEVAL_RUN, &bytes, &self.manifest(RETRIEVAL_RUN, "retrieve", None, inputs))?;
        Ok(runs)
    }

    /// Reranks the head of every list in `retrieval.run`.
    pub fn rerank(&self) -> Result<RerankSummary> {
        let corpus = self.corpus()?;
        let queries = self.queries()?;
        let backend = self.backend(&corpus, &queries)?;
        let cfg = self.config.rerank.to_rerank_config()?;
        let first_path = self.artifact(RETRIEVAL_RUN);
        let first = load_run(&first_path)?;
        let topics: BTreeMap<&str, ()> = queries.entries.iter().map(|q| (q.id.as_str(), ())).collect();
        if let Some(stray) = first.iter().find(|l| !topics.contains_key(l.query_id.as_str())) {
            return Err(Error::UnknownQuery(stray.query_id.clone()));
        }

        let outcomes = first
            .par_iter()
            .map(|list| {
                let query_text = corpus.text(&list.query_id, cfg.query_source)?;
                rerank_query(
                    list,
                    query_text,
                    |id| corpus.text(id, cfg.doc_source).map(str::to_string),
                    &*backend,
                    &cfg,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let comparisons: Vec<ComparisonOutcome> = outcomes
            .iter()
            .flat_map(|o| o.comparisons.iter().cloned())
            .collect();
        let log: Vec<RerankLogEntry> = outcomes
            .iter()
            .map(|o| RerankLogEntry {
                query_id: o.list.query_id.clone(),
                window: o.window_scores.clone(),
                disagreement_rate: o.disagreement_rate,
                fallback: o.fallback.clone(),
            })
            .collect();
        let runs: Vec<RankedList> = outcomes.into_iter().map(|o| o.list).collect();

        let inputs = self.inputs(&[
            ("corpus", &self.config.paths.corpus),
            ("queries", &self.config.paths.queries),
            ("first_stage", &first_path),
        ])?;
        let run_name = rerank_run_name(cfg.strategy);
        let mut bytes = Vec::new();
        write_run(&mut bytes, &runs)?;
        self.write(&run_name, &bytes, &self.manifest(&run_name, "rerank", Some(&*backend), inputs.clone()))?;
        let log_name = rerank_log_name(cfg.strategy);
        self.write(
            &log_name,
            &to_jsonl(&log)?,
            &self.manifest(&log_name, "rerank", Some(&*backend), inputs.clone()),
        )?;
        if cfg.strategy == Strategy::Pairwise {
            self.write(
                COMPARISONS_FILE,
                &to_jsonl(&comparisons)?,
                &self.manifest(COMPARISONS_FILE, "rerank", Some(&*backend), inputs),
            )?;
        }
        Ok(RerankSummary {
            runs,
            comparisons: comparisons.len(),
            fallbacks: log.iter().filter(|e| e.fallback.is_some()).count(),
        })
    }

    /// Scores a run file against `qrels.txt` and writes `metrics.<run>.{tsv,json}`.
    pub fn evaluate(&self, run_path: &Path) -> Result<MetricTable> {
        let runs = load_run(run_path)?;
        let qrels_path = self.artifact(QRELS_FILE);
        let qrels = load_qrels(&qrels_path)?;
        let e = &self.config.evaluate;
        let mut metrics = e.metrics();
        metrics.extend(e.oracle_metrics(self.config.rerank.window));
        let table = evaluate_run(&runs, &qrels, &metrics, e.idcg)?;

        let run_file = run_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let inputs = self.inputs(&[("run", run_path), ("qrels", &qrels_path)])?;
        self.ensure_out_dir()?;
        let tsv = metrics_name(&run_file, "tsv");
        self.write(&tsv, table.to_tsv().as_bytes(), &self.manifest(&tsv, "evaluate", None, inputs.clone()))?;
        let json = metrics_name(&run_file, "json");
        self.write(&json, &to_json_pretty(&table)?, &self.manifest(&json, "evaluate", None, inputs))?;
        Ok(table)
    }

    /// Fact-level consistency between the configured hypothesis and evidence sources.
    pub fn factcheck(&self) -> Result<ConsistencyReport> {
        let corpus = self.corpus()?;
        let queries = self.queries()?;
        let backend = self.backend(&corpus, &queries)?;
        let f = &self.config.factcheck;
        let report = consistency_report(
            &corpus,
            f.hypothesis,
            f.evidence,
            &*backend,
            f.sample,
            self.config.seed,
            &f.options()?,
        )?;
        self.ensure_out_dir()?;
        let inputs = self.inputs(&[("corpus", &self.config.paths.corpus)])?;
        let tsv = factcheck_name(f.hypothesis, f.evidence, "tsv");
        self.write(
            &tsv,
            report.to_tsv().as_bytes(),
            &self.manifest(&tsv, "factcheck", Some(&*backend), inputs.clone()),
        )?;
        let log = factcheck_name(f.hypothesis, f.evidence, "verdicts.jsonl");
        self.write(
            &log,
            &to_jsonl(&report.verdicts)?,
            &self.manifest(&log, "factcheck", Some(&*backend), inputs),
        )?;
        Ok(report)
    }

    /// ingest → autosum (when a stage needs it) → retrieve → rerank → evaluate both runs.
    pub fn run_pipeline(&self, resume: bool) -> Result<PipelineSummary> {
        let mut skipped = Vec::new();
        let base = self.base_roles();
        let ingest = if resume && self.is_current(INGEST_FILE, &base) && self.is_current(QRELS_FILE, &base) {
            skipped.push("ingest".to_string());
            let path = self.artifact(INGEST_FILE);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text)?
        } else {
            self.ingest()?
        };

        let autosum = if self.autosum_needed(&self.corpus()?) {
            Some(self.autosum()?)
        } else {
            None
        };

        let p = &self.config.paths;
        let retrieve_roles = [("queries", p.queries.as_path()), ("embeddings", p.embeddings.as_path())];
        if resume && self.is_current(RETRIEVAL_RUN, &retrieve_roles) {
            skipped.push("retrieve".into());
        } else {
            self.retrieve()?;
        }

        let first = self.artifact(RETRIEVAL_RUN);
        let run_name = rerank_run_name(self.config.rerank.strategy);
        let rerank_roles = [
            ("corpus", p.corpus.as_path()),
            ("queries", p.queries.as_path()),
            ("first_stage", first.as_path()),
        ];
        if resume && self.is_current(&run_name, &rerank_roles) {
            skipped.push("rerank".into());
        } else {
            self.rerank()?;
        }

        let retrieval = self.evaluate(&first)?;
        let rerank = self.evaluate(&self.artifact(&run_name))?;
        Ok(PipelineSummary {
            ingest,
            autosum,
            retrieval,
            rerank,
            skipped,
        })
    }
}
