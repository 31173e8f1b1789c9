use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use topicrank::config::{BackendChoice, MockMode};
use topicrank::corpus::SourceKind;
use topicrank::metrics::IdcgPool;
use topicrank::pipeline::{rerank_run_name, Session, RETRIEVAL_RUN};
use topicrank::rerank::{LexicalVariant, PairwiseMode, Strategy};
use topicrank::{Config, Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "topicrank", version, about = "Two-stage topic retrieval with zero-shot reranking")]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    queries: Option<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Judgments file; derived from topic labels when not given.
    #[arg(long, global = true)]
    qrels: Option<PathBuf>,
    /// Output directory for runs, logs and metrics.
    #[arg(long = "out", global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    backend: Option<BackendArg>,
    #[arg(long, value_enum, global = true)]
    mock_mode: Option<MockArg>,
    /// Probability that the oracle mock answers a comparison wrongly.
    #[arg(long, global = true)]
    flip_prob: Option<f64>,
    #[arg(long, global = true)]
    base_url: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum MockArg {
    Oracle,
    Hash,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Classification,
    FreeGeneration,
}

#[derive(Args, Default)]
struct RetrieveArgs {
    /// Candidates kept per query.
    #[arg(long)]
    k: Option<usize>,
    /// Embedding source of the query clip.
    #[arg(long)]
    query_source: Option<SourceKind>,
    /// Embedding source searched in the archive.
    #[arg(long)]
    archive_source: Option<SourceKind>,
    /// Keep the query clip in its own candidate pool.
    #[arg(long)]
    include_self: bool,
}

#[derive(Args, Default)]
struct RerankArgs {
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Reranking window (top-N of the first stage).
    #[arg(long = "n")]
    window: Option<usize>,
    /// Text source of the query shown to the reranker.
    #[arg(long)]
    rerank_query_source: Option<SourceKind>,
    /// Text source of the candidates shown to the reranker.
    #[arg(long)]
    doc_source: Option<SourceKind>,
    #[arg(long, value_enum)]
    pairwise_mode: Option<ModeArg>,
    #[arg(long)]
    lexical_variant: Option<LexicalVariant>,
    /// Words kept per passage.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus, query set and embeddings.
    Synth {
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long = "num-queries")]
        num_queries: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        /// Leave AutoSum texts out for the autosum step to fill.
        #[arg(long)]
        without_autosum: bool,
    },
    /// Validate corpus, queries and embeddings; write judgments.
    Ingest {
        /// Fetch missing embeddings for these sources from the embedding endpoint.
        #[arg(long, value_delimiter = ',')]
        embed: Vec<SourceKind>,
    },
    /// Summarize ASR transcripts into AutoSum texts (corpus updated in place).
    Autosum {
        #[arg(long)]
        force: bool,
    },
    /// First-stage cosine retrieval.
    Retrieve(RetrieveArgs),
    /// Rerank the head of the first-stage run.
    Rerank(RerankArgs),
    /// Score runs against the judgments.
    Evaluate {
        /// Run files; defaults to the retrieval run and the configured rerank run.
        #[arg(long)]
        run: Vec<PathBuf>,
        #[arg(long)]
        idcg: Option<IdcgPool>,
    },
    /// Fact-level consistency between two text sources.
    Factcheck {
        #[arg(long)]
        hypothesis: Option<SourceKind>,
        #[arg(long)]
        evidence: Option<SourceKind>,
        #[arg(long)]
        sample: Option<usize>,
    },
    /// ingest, autosum if needed, retrieve, rerank and evaluate.
    Pipeline {
        #[command(flatten)]
        retrieve: RetrieveArgs,
        #[command(flatten)]
        rerank: RerankArgs,
        /// Skip stages whose artifacts are current.
        #[arg(long)]
        resume: bool,
    },
}

fn apply_common(cfg: &mut Config, c: &Common) {
    let p = &mut cfg.paths;
    if let Some(v) = &c.corpus {
        p.corpus = v.clone();
    }
    if let Some(v) = &c.queries {
        p.queries = v.clone();
    }
    if let Some(v) = &c.embeddings {
        p.embeddings = v.clone();
    }
    if let Some(v) = &c.qrels {
        p.qrels = Some(v.clone());
    }
    if let Some(v) = &c.out_dir {
        p.out_dir = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    let b = &mut cfg.backend;
    if let Some(v) = c.backend {
        b.kind = match v {
            BackendArg::Mock => BackendChoice::Mock,
            BackendArg::Remote => BackendChoice::Remote,
        };
    }
    if let Some(v) = c.mock_mode {
        b.mock.mode = match v {
            MockArg::Oracle => MockMode::Oracle,
            MockArg::Hash => MockMode::Hash,
        };
    }
    if let Some(v) = c.flip_prob {
        b.mock.flip_prob = v;
    }
    if let Some(v) = &c.base_url {
        b.remote.base_url = v.clone();
    }
    if let Some(v) = &c.model {
        b.remote.model = v.clone();
    }
}

fn apply_retrieve(cfg: &mut Config, a: &RetrieveArgs) {
    let r = &mut cfg.retrieval;
    if let Some(k) = a.k {
        r.k = k;
    }
    if let Some(s) = a.query_source {
        r.query_source = s;
    }
    if let Some(s) = a.archive_source {
        r.archive_source = s;
    }
    if a.include_self {
        r.include_self = true;
    }
}

fn apply_rerank(cfg: &mut Config, a: &RerankArgs) {
    let r = &mut cfg.rerank;
    if let Some(v) = a.strategy {
        r.strategy = v;
    }
    if let Some(v) = a.window {
        r.window = v;
    }
    if let Some(v) = a.rerank_query_source {
        r.query_source = v;
    }
    if let Some(v) = a.doc_source {
        r.doc_source = v;
    }
    if let Some(v) = a.pairwise_mode {
        r.pairwise_mode = match v {
            ModeArg::Classification => PairwiseMode::Classification,
            ModeArg::FreeGeneration => PairwiseMode::FreeGeneration,
        };
    }
    if let Some(v) = a.lexical_variant {
        r.lexical_variant = v;
    }
    if let Some(v) = a.budget {
        r.passage_token_budget = v;
    }
}

fn build_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    apply_common(&mut cfg, &cli.common);
    match &cli.command {
        Command::Synth {
            docs,
            topics,
            num_queries,
            dim,
            without_autosum,
        } => {
            let s = &mut cfg.synth;
            if let Some(v) = docs {
                s.docs = *v;
            }
            if let Some(v) = topics {
                s.topics = *v;
            }
            if let Some(v) = num_queries {
                s.queries = *v;
            }
            if let Some(v) = dim {
                s.dim = *v;
            }
            if *without_autosum {
                s.with_autosum = false;
            }
        }
        Command::Autosum { force } => cfg.autosum.force |= force,
        Command::Retrieve(a) => apply_retrieve(&mut cfg, a),
        Command::Rerank(a) => apply_rerank(&mut cfg, a),
        Command::Evaluate { idcg, .. } => {
            if let Some(v) = idcg {
                cfg.evaluate.idcg = *v;
            }
        }
        Command::Factcheck {
            hypothesis,
            evidence,
            sample,
        } => {
            let f = &mut cfg.factcheck;
            if let Some(v) = hypothesis {
                f.hypothesis = *v;
            }
            if let Some(v) = evidence {
                f.evidence = *v;
            }
            if let Some(v) = sample {
                f.sample = *v;
            }
        }
        Command::Pipeline {
            retrieve, rerank, ..
        } => {
            apply_retrieve(&mut cfg, retrieve);
            apply_rerank(&mut cfg, rerank);
        }
        Command::Ingest { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    let session = Session::new(cfg)?;
    let cfg = session.config();
    match &cli.command {
        Command::Synth { .. } => {
            let data = topicrank::synth::generate(&cfg.synth_config())?;
            let p = &cfg.paths;
            for path in [&p.corpus, &p.queries, &p.embeddings] {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
            }
            data.corpus.save(&p.corpus)?;
            let mut q = Vec::new();
            data.queries.write_jsonl(&mut q)?;
            std::fs::write(&p.queries, q).map_err(|e| Error::io(&p.queries, e))?;
            data.embeddings.save(&p.embeddings)?;
            println!(
                "wrote {} documents, {} queries, {}-d embeddings",
                data.corpus.len(),
                data.queries.len(),
                data.embeddings.dim()
            );
        }
        Command::Ingest { embed } => {
            if !embed.is_empty() {
                let added = session.embed(embed)?;
                info!("added {added} embeddings");
            }
            let s = session.ingest()?;
            println!("documents\t{}", s.documents);
            println!("queries\t{}", s.queries);
            println!("topics\t{}", s.topics.len());
            for (t, n) in &s.topics {
                println!("topic:{t}\t{n}");
            }
            for (src, n) in &s.texts {
                println!("text:{src}\t{n}");
            }
            for (src, n) in &s.embeddings {
                println!("embedding:{src}\t{n}");
            }
        }
        Command::Autosum { .. } => {
            let r = session.autosum()?;
            println!(
                "summarized\t{}\ncached\t{}\nchunked\t{}\nfailed\t{}",
                r.summarized.len(),
                r.cached,
                r.summarized.iter().filter(|e| e.chunked).count(),
                r.failures.len()
            );
        }
        Command::Retrieve(_) => {
            let runs = session.retrieve()?;
            println!("{}\t{} queries", session.artifact(RETRIEVAL_RUN).display(), runs.len());
        }
        Command::Rerank(_) => {
            let s = session.rerank()?;
            println!(
                "{}\t{} queries\t{} comparisons\t{} fallbacks",
                session.artifact(&rerank_run_name(cfg.rerank.strategy)).display(),
                s.runs.len(),
                s.comparisons,
                s.fallbacks
            );
        }
        Command::Evaluate { run, .. } => {
            let runs = if run.is_empty() {
                [
                    session.artifact(RETRIEVAL_RUN),
                    session.artifact(&rerank_run_name(cfg.rerank.strategy)),
                ]
                .into_iter()
                .filter(|p| p.exists())
                .collect()
            } else {
                run.clone()
            };
            if runs.is_empty() {
                return Err(Error::InvalidArgument(
                    "no run files to evaluate; run `retrieve` first or pass --run".into(),
                ));
            }
            for path in runs {
                let table = session.evaluate(&path)?;
                println!("# {}", path.display());
                print!("{}", table.to_tsv());
            }
        }
        Command::Factcheck { .. } => {
            let r = session.factcheck()?;
            print!("{}", r.to_tsv());
        }
        Command::Pipeline { resume, .. } => {
            let s = session.run_pipeline(*resume)?;
            if !s.skipped.is_empty() {
                info!("skipped current stages: {}", s.skipped.join(", "));
            }
            let tsv = [s.retrieval.to_tsv(), s.rerank.to_tsv()];
            let header = tsv[0].lines().next().unwrap_or_default().replacen("query", "stage", 1);
            println!("{header}");
            for (name, t) in ["retrieval".to_string(), format!("rerank-{}", cfg.rerank.strategy)]
                .iter()
                .zip(&tsv)
            {
                if let Some(mean) = t.lines().last() {
                    println!("{}", mean.replacen("mean", name, 1));
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Validation => 2,
        ErrorCategory::Runtime => 3,
        ErrorCategory::Backend => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::InvalidConfig(problems)) => {
            error!("invalid configuration:");
            for p in &problems {
                eprintln!("  - {p}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
