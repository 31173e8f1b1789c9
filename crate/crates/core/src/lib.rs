//! Two-stage topic retrieval over an audio archive: exact cosine retrieval on
//! precomputed embeddings, zero-shot reranking of the top candidates with a
//! text-generation backend, ranking metrics, and a fact-level consistency check
//! between text sources.

pub mod autosum;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod factcheck;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod rerank;
pub mod run;
pub mod synth;
pub mod template;

pub use backend::{Backend, GenRequest, MockBackend, OptionScoreRequest, RemoteBackend, RemoteConfig};
pub use config::Config;
pub use corpus::{Corpus, Document, Qrels, Query, QuerySet, SourceKind};
pub use embedding::{EmbeddingIndex, EmbeddingSet};
pub use error::{Error, ErrorCategory, Result};
pub use metrics::{IdcgPool, Metric, MetricTable};
pub use pipeline::Session;
pub use rerank::{RerankConfig, Strategy};
pub use run::{RankedList, Stage};
