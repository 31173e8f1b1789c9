//! Experiment configuration, read from TOML.
//!
//! Every section has defaults, so an empty file is a valid configuration. Unknown keys
//! are rejected. Semantic checks run over the whole tree and report every problem at
//! once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::autosum::AutosumOptions;
use crate::backend::{Backend, MockBackend, RemoteBackend, RemoteConfig, DEFAULT_MAX_NEW_TOKENS};
use crate::corpus::{Corpus, QuerySet, SourceKind};
use crate::error::{Error, Result};
use crate::factcheck::FactCheckOptions;
use crate::metrics::{IdcgPool, Metric};
use crate::oracle::relevance_oracle_with;
use crate::rerank::{
    LexicalVariant, PairwiseMode, RerankConfig, Strategy, DEFAULT_PASSAGE_BUDGET, DEFAULT_WINDOW,
};
use crate::synth::SynthConfig;
use crate::template::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub embeddings: PathBuf,
    /// Judgments file; derived from topic labels when absent.
    pub qrels: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: "corpus.jsonl".into(),
            queries: "queries.jsonl".into(),
            embeddings: "embeddings.jsonl".into(),
            qrels: None,
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    /// Embedding source of the query clip.
    pub query_source: SourceKind,
    /// Embedding source searched in the archive.
    pub archive_source: SourceKind,
    /// Keep the query clip in its own candidate pool and judgments.
    pub include_self: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 1000,
            query_source: SourceKind::Asr,
            archive_source: SourceKind::Asr,
            include_self: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub strategy: Strategy,
    pub window: usize,
    pub query_source: SourceKind,
    pub doc_source: SourceKind,
    pub passage_token_budget: usize,
    pub pairwise_mode: PairwiseMode,
    pub lexical_variant: LexicalVariant,
    pub max_new_tokens: usize,
    pub listwise_template: Option<PathBuf>,
    pub pairwise_template: Option<PathBuf>,
}

impl Default for RerankSection {
    fn default() -> Self {
        RerankSection {
            strategy: Strategy::Pairwise,
            window: DEFAULT_WINDOW,
            query_source: SourceKind::Asr,
            doc_source: SourceKind::Asr,
            passage_token_budget: DEFAULT_PASSAGE_BUDGET,
            pairwise_mode: PairwiseMode::Classification,
            lexical_variant: LexicalVariant::RougeL,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            listwise_template: None,
            pairwise_template: None,
        }
    }
}

impl RerankSection {
    pub fn to_rerank_config(&self) -> Result<RerankConfig> {
        let base = RerankConfig::default();
        Ok(RerankConfig {
            window: self.window,
            strategy: self.strategy,
            query_source: self.query_source,
            doc_source: self.doc_source,
            passage_token_budget: self.passage_token_budget,
            pairwise_mode: self.pairwise_mode,
            lexical_variant: self.lexical_variant,
            max_new_tokens: self.max_new_tokens,
            listwise_template: load_or(self.listwise_template.as_deref(), base.listwise_template)?,
            pairwise_template: load_or(self.pairwise_template.as_deref(), base.pairwise_template)?,
        })
    }
}

fn load_or(path: Option<&Path>, default: PromptTemplate) -> Result<PromptTemplate> {
    path.map_or(Ok(default), PromptTemplate::load)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub ndcg: Vec<usize>,
    pub precision: Vec<usize>,
    /// Also report oracle precision of the first-stage window at each precision cutoff
    /// that fits in the window.
    pub oracle: bool,
    pub idcg: IdcgPool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            ndcg: vec![3, 5, 10],
            precision: vec![1, 3, 5],
            oracle: true,
            idcg: IdcgPool::Corpus,
        }
    }
}

impl EvaluateConfig {
    pub fn metrics(&self) -> Vec<Metric> {
        self.ndcg
            .iter()
            .map(|&k| Metric::Ndcg { k })
            .chain(self.precision.iter().map(|&k| Metric::Precision { k }))
            .collect()
    }

    pub fn oracle_metrics(&self, window: usize) -> Vec<Metric> {
        if !self.oracle {
            return Vec::new();
        }
        self.precision
            .iter()
            .filter(|&&k| k <= window)
            .map(|&k| Metric::OraclePrecision { window, k })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// Judges relevance from the topic labels.
    Oracle,
    /// Hash-derived answers with no relation to relevance.
    Hash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    pub mode: MockMode,
    /// Probability that the oracle answers a pairwise comparison the wrong way.
    pub flip_prob: f64,
}

impl Default for MockSection {
    fn default() -> Self {
        MockSection {
            mode: MockMode::Oracle,
            flip_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendChoice,
    pub mock: MockSection,
    pub remote: RemoteConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendChoice::Mock,
            mock: MockSection::default(),
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutosumSection {
    pub max_new_tokens: usize,
    pub template: Option<PathBuf>,
    /// Regenerate summaries that already exist.
    pub force: bool,
}

impl Default for AutosumSection {
    fn default() -> Self {
        AutosumSection {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            template: None,
            force: false,
        }
    }
}

impl AutosumSection {
    pub fn options(&self) -> Result<AutosumOptions> {
        let base = AutosumOptions::default();
        Ok(AutosumOptions {
            max_new_tokens: self.max_new_tokens,
            template: load_or(self.template.as_deref(), base.template)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactcheckSection {
    pub hypothesis: SourceKind,
    pub evidence: SourceKind,
    pub sample: usize,
    pub max_new_tokens: usize,
    pub decompose_template: Option<PathBuf>,
    pub verify_template: Option<PathBuf>,
}

impl Default for FactcheckSection {
    fn default() -> Self {
        FactcheckSection {
            hypothesis: SourceKind::Synopsis,
            evidence: SourceKind::Asr,
            sample: 500,
            max_new_tokens: 256,
            decompose_template: None,
            verify_template: None,
        }
    }
}

impl FactcheckSection {
    pub fn options(&self) -> Result<FactCheckOptions> {
        let base = FactCheckOptions::default();
        Ok(FactCheckOptions {
            decompose_template: load_or(self.decompose_template.as_deref(), base.decompose_template)?,
            verify_template: load_or(self.verify_template.as_deref(), base.verify_template)?,
            max_new_tokens: self.max_new_tokens,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seeds the synthetic generator, the mock backend and fact-check sampling.
    pub seed: u64,
    pub paths: PathsConfig,
    pub retrieval: RetrievalConfig,
    pub rerank: RerankSection,
    pub evaluate: EvaluateConfig,
    pub backend: BackendConfig,
    pub autosum: AutosumSection,
    pub factcheck: FactcheckSection,
    pub synth: SynthConfig,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn from_toml_str(text: &str, label: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: label.to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    /// Reads a config file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            cfg.rebase_paths(dir);
        }
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, dir: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.corpus, &mut p.queries, &mut p.embeddings, &mut p.out_dir] {
            rebase(dir, path);
        }
        let optional = [
            &mut p.qrels,
            &mut self.rerank.listwise_template,
            &mut self.rerank.pairwise_template,
            &mut self.autosum.template,
            &mut self.factcheck.decompose_template,
            &mut self.factcheck.verify_template,
        ];
        for path in optional.into_iter().flatten() {
            rebase(dir, path);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every semantic problem in the tree.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.retrieval.k == 0 {
            v.push("retrieval.k must be at least 1".into());
        }
        match self.rerank.to_rerank_config() {
            Ok(rc) => v.extend(rc.violations()),
            Err(e) => v.push(format!("rerank template: {e}")),
        }
        if self.rerank.window > self.retrieval.k {
            v.push(format!(
                "rerank.window {} exceeds retrieval.k {}",
                self.rerank.window, self.retrieval.k
            ));
        }
        let e = &self.evaluate;
        if e.ndcg.is_empty() && e.precision.is_empty() {
            v.push("evaluate needs at least one cutoff".into());
        }
        if e.ndcg.iter().chain(&e.precision).any(|&k| k == 0) {
            v.push("evaluate cutoffs must be at least 1".into());
        }
        if let Some(&k) = e.ndcg.iter().chain(&e.precision).max() {
            if k > self.retrieval.k {
                v.push(format!("evaluate cutoff {k} exceeds retrieval.k {}", self.retrieval.k));
            }
        }
        let m = &self.backend.mock;
        if !(0.0..=1.0).contains(&m.flip_prob) {
            v.push("backend.mock.flip_prob must be in [0, 1]".into());
        }
        if self.backend.kind == BackendChoice::Remote {
            v.extend(self.backend.remote.violations());
        }
        if self.autosum.max_new_tokens == 0 {
            v.push("autosum.max_new_tokens must be at least 1".into());
        }
        if let Err(e) = self.autosum.options().and_then(|o| {
            o.template.check("autosum", &["transcript"], &[])
        }) {
            match e {
                Error::InvalidConfig(p) => v.extend(p),
                other => v.push(format!("autosum template: {other}")),
            }
        }
        if self.factcheck.sample == 0 {
            v.push("factcheck.sample must be at least 1".into());
        }
        if self.factcheck.hypothesis == self.factcheck.evidence {
            v.push("factcheck.hypothesis and factcheck.evidence must differ".into());
        }
        match self.factcheck.options() {
            Ok(o) => v.extend(o.violations()),
            Err(e) => v.push(format!("factcheck template: {e}")),
        }
        v.extend(self.synth.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// SHA-256 over the experiment settings. File locations are left out so the same
    /// experiment hashes the same wherever it runs; template files count by content.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        obj.remove("paths");
        let templates = [
            ("rerank", "listwise_template", &self.rerank.listwise_template),
            ("rerank", "pairwise_template", &self.rerank.pairwise_template),
            ("autosum", "template", &self.autosum.template),
            ("factcheck", "decompose_template", &self.factcheck.decompose_template),
            ("factcheck", "verify_template", &self.factcheck.verify_template),
        ];
        for (section, key, path) in templates {
            let content = path
                .as_ref()
                .map(|p| std::fs::read_to_string(p).unwrap_or_else(|_| format!("unreadable:{}", p.display())));
            obj[section][key] = content.map_or(Value::Null, Value::String);
        }
        // serde_json maps are ordered, so this serialization is canonical
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// The configured backend. The oracle mock needs the corpus and queries to know
    /// the labels.
    pub fn build_backend(
        &self,
        corpus: &Corpus,
        queries: &QuerySet,
    ) -> Result<Box<dyn Backend>> {
        match self.backend.kind {
            BackendChoice::Remote => Ok(Box::new(RemoteBackend::new(self.backend.remote.clone())?)),
            BackendChoice::Mock => match self.backend.mock.mode {
                MockMode::Hash => Ok(Box::new(MockBackend::new())),
                MockMode::Oracle => Ok(Box::new(relevance_oracle_with(
                    corpus,
                    queries,
                    &self.rerank.to_rerank_config()?,
                    &self.factcheck.options()?,
                    self.backend.mock.flip_prob,
                    self.seed,
                )?)),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c = Config::from_toml_str("", "t").unwrap();
        assert_eq!(c, Config::default());
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let c = Config::from_toml_str(
            r#"
seed = 7
[retrieval]
k = 50
archive_source = "synopsis"
[rerank]
strategy = "listwise"
pairwise_mode = "free_generation"
lexical_variant = "rouge1"
[evaluate]
idcg = "window"
[backend]
kind = "remote"
[backend.remote]
model = "m"
max_retries = 2
"#,
            "t",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.retrieval.archive_source, SourceKind::Synopsis);
        assert_eq!(c.rerank.strategy, Strategy::Listwise);
        assert_eq!(c.rerank.pairwise_mode, PairwiseMode::FreeGeneration);
        assert_eq!(c.rerank.lexical_variant, LexicalVariant::Rouge1);
        assert_eq!(c.evaluate.idcg, IdcgPool::Window);
        assert_eq!(c.backend.kind, BackendChoice::Remote);
        assert_eq!(c.backend.remote.max_retries, 2);
        assert_eq!(c.backend.remote.timeout_s, 60.0);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(Config::from_toml_str("[retrieval]\nkk = 3\n", "t").is_err());
        assert!(Config::from_toml_str("[rerank]\nstrategy = \"bogus\"\n", "t").is_err());
    }

    #[test]
    fn all_violations_reported() {
        let mut c = Config::default();
        c.retrieval.k = 0;
        c.rerank.window = 0;
        c.backend.mock.flip_prob = 2.0;
        c.factcheck.sample = 0;
        match c.validate() {
            Err(Error::InvalidConfig(v)) => {
                assert!(v.len() >= 4, "{v:?}");
                assert!(v.iter().any(|s| s.contains("retrieval.k")));
                assert!(v.iter().any(|s| s.contains("rerank.window")));
                assert!(v.iter().any(|s| s.contains("flip_prob")));
                assert!(v.iter().any(|s| s.contains("factcheck.sample")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = Config::default();
        let mut b = a.clone();
        b.paths.out_dir = "/elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.rerank.window = 5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::default();
        c.paths.qrels = Some("q.txt".into());
        c.rerank.strategy = Strategy::Lexical;
        let back = Config::from_toml_str(&c.to_toml(), "t").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "[paths]\ncorpus = \"data/c.jsonl\"\nout_dir = \"/abs/out\"\n").unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.paths.corpus, dir.path().join("data/c.jsonl"));
        assert_eq!(c.paths.out_dir, PathBuf::from("/abs/out"));
    }
}
