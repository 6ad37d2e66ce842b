//! The `gtr` command line.
//!
//! Every subcommand reads its inputs from files and writes artifacts that
//! the next step consumes, so `build-vocab → train → encode → index →
//! search → eval` composes in a shell script. Data goes to stdout, logs to
//! stderr. Usage errors exit with 2; any other failure prints a single
//! `error: <kind>: <message>` line and exits with 1.

use std::ffi::OsString;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::corpus::{load_corpus, load_qrels, load_queries, Corpus, Format, Query};
use crate::encoder::{encode_batch, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_reports, evaluate_run_with, median_topk_doc_length, read_run_file, write_run, EvalOptions, MetricSpec,
    RankedList, RunResult,
};
use crate::experiments::synthetic::load_training_dir;
use crate::experiments::{bench_encode_latency, generate, latency_table, ExperimentSpec, Lab};
use crate::index::{build_ivf, encode_corpus, search_batch, search_exact_blocked, search_ivf, EmbeddingStore, IvfIndex};
use crate::lexical::{bm25_search, build_bm25_index, DEFAULT_B, DEFAULT_K1};
use crate::tensor::normalize_in_place;
use crate::tokenizer::{TokenSequence, Vocab};
use crate::trainer::{run_multi_stage, run_single_stage, InitFrom, LossReport, StageName, StageSpec, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "gtr", version, about = "Desk-scale dense retrieval: train, encode, index, search, evaluate")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for encoding and search; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a word vocabulary from corpora and query files.
    BuildVocab(BuildVocabArgs),
    /// Train the encoder: pretraining, fine-tuning, or both in sequence.
    Train(TrainArgs),
    /// Encode a corpus into an embedding store.
    Encode(EncodeArgs),
    /// Build an IVF index over an embedding store.
    Index(IndexArgs),
    /// Retrieve top-k documents and print TREC run lines.
    Search(SearchArgs),
    /// Score run files against qrels and print a metric table.
    Eval(EvalArgs),
    /// Generate the synthetic benchmark or run an experiment on it.
    Experiment(ExperimentArgs),
    /// Time encoding or exact search.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    /// Corpus files (.jsonl or .tsv); repeatable.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Query files whose text also counts; repeatable.
    #[arg(long)]
    queries: Vec<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    max_vocab: usize,
    #[arg(long, default_value_t = 16)]
    oov_buckets: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stages {
    Both,
    Pretrain,
    Finetune,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, env = "GTR_VOCAB")]
    vocab: PathBuf,
    /// TOML job file with optional [encoder], [pretrain] and [finetune] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one job key, e.g. `--set finetune.steps=200`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_enum, default_value_t = Stages::Both)]
    stages: Stages,
    /// Training directory (corpus.jsonl, queries.jsonl, pairs.tsv, negatives.tsv).
    #[arg(long)]
    pretrain_data: Option<PathBuf>,
    #[arg(long)]
    finetune_data: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long, env = "GTR_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "GTR_VOCAB")]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 512)]
    max_len: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Documents per resumable shard; 0 encodes in one pass.
    #[arg(long, default_value_t = 0)]
    shard_docs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    clusters: usize,
    #[arg(long, default_value_t = 25)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Embedding store for dense search.
    #[arg(long, required_unless_present = "bm25")]
    store: Option<PathBuf>,
    #[arg(long, env = "GTR_CHECKPOINT")]
    checkpoint: Option<PathBuf>,
    #[arg(long, env = "GTR_VOCAB")]
    vocab: Option<PathBuf>,
    /// A single query text.
    #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
    query: Option<String>,
    /// Id used for `--query` in the run output.
    #[arg(long, default_value = "q1")]
    query_id: String,
    /// Query file (.jsonl or .tsv).
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Search through this IVF index instead of scanning the whole store.
    #[arg(long)]
    ivf: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    n_probe: usize,
    /// Lexical search over `--corpus` instead of dense search.
    #[arg(long, requires = "corpus")]
    bm25: bool,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "gtr")]
    tag: String,
    /// Write the run here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// TREC run file; repeatable, paired with `--qrels` in order.
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    #[arg(long, required = true)]
    qrels: Vec<PathBuf>,
    /// Dataset names for the table rows; defaults to the run file stems.
    #[arg(long)]
    dataset: Vec<String>,
    #[arg(long, default_value = "ndcg@10,recall@100,mrr@10")]
    metrics: String,
    /// Depth the runs were retrieved to; defaults to the deepest metric.
    #[arg(long)]
    k_max: Option<usize>,
    /// Also report an average that leaves this dataset out.
    #[arg(long)]
    exclude: Option<String>,
    /// Drop queries that have no positively graded document.
    #[arg(long)]
    skip_zero_relevant: bool,
    /// Corpus for the median top-k document length line (single run only).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    length_k: usize,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write `dataset.metric=value` lines here.
    #[arg(long)]
    key_values: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentKind {
    /// Write the synthetic benchmark files.
    Generate,
    Sweep,
    Ablation,
    DataEfficiency,
    Bm25,
    All,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    kind: ExperimentKind,
    /// TOML experiment spec; built-in defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchKind {
    /// Single-batch encode latency per encoder config.
    Encode,
    /// Exact-search time per scoring block size.
    Scan,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    kind: BenchKind,
    /// Experiment spec supplying the encoder configs; desk sweep otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 128)]
    input_len: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 100_000)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    num_queries: usize,
    #[arg(long, value_delimiter = ',', default_value = "256,1024,4096,16384")]
    blocks: Vec<usize>,
}

/// Training job file: encoder shape plus one config per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainJob {
    /// `vocab_size = 0` takes the size of the vocabulary file.
    pub encoder: EncoderConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        TrainJob {
            encoder: EncoderConfig::default(),
            pretrain: TrainConfig::pretrain_default(),
            finetune: TrainConfig::finetune_default(),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::InvalidArgument(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", error_kind(&e), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::DuplicateId { .. } => "duplicate-id",
        Error::Malformed { .. } => "malformed",
        Error::UnknownDocument(_) => "unknown-document",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::InvalidConfig(_) => "invalid-config",
        Error::Shape(_) => "shape",
        Error::TokenOutOfRange { .. } => "token-out-of-range",
        Error::NonFiniteGradient(_) | Error::NonFinite(_) => "non-finite",
        Error::Corrupt { .. } => "corrupt",
        Error::UnsupportedVersion { .. } => "unsupported-version",
        Error::Config(_) => "config",
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Train(a) => train(a, cli.seed),
        Command::Encode(a) => encode(a),
        Command::Index(a) => index(a, cli.seed),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a, cli.seed),
        Command::Bench(a) => bench(a, cli.seed),
    }
}

/// Reads an optional TOML file, applies `key.path=value` overrides and
/// deserializes. Unknown keys are rejected by name.
pub fn load_job<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    apply_overrides(&mut table, overrides)?;
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().replace('\n', " ")))
}

fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` must look like section.key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("bad override key `{key}`")));
        }
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut cur = &mut *table;
        for p in parents {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
        }
        cur.insert(last.to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn stdout_line(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn build_vocab(a: &BuildVocabArgs) -> Result<()> {
    let mut texts = Vec::new();
    for p in &a.corpus {
        texts.extend(load_corpus(p, Format::from_path(p))?.iter().map(|d| d.full_text()));
    }
    for p in &a.queries {
        texts.extend(load_queries(p, Format::from_path(p))?.into_iter().map(|q| q.text));
    }
    let vocab = Vocab::build_from_texts(&texts, a.max_vocab, a.oov_buckets)?;
    vocab.save(&a.out)?;
    log::info!("vocabulary: {} words, {} ids", vocab.num_words(), vocab.size());
    stdout_line(&format!("{}\n", a.out.display()))
}

fn train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    let mut job: TrainJob = load_job(a.config.as_deref(), &a.overrides)?;
    if job.encoder.vocab_size == 0 {
        job.encoder.vocab_size = vocab.size();
    }
    if let Some(s) = seed {
        job.pretrain.seed = s;
        job.finetune.seed = s;
    }
    job.encoder.validate()?;
    mkdir(&a.out_dir)?;

    let data = |dir: &Option<PathBuf>, flag: &str| -> Result<Vec<_>> {
        let dir = dir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{flag} is required for this stage")))?;
        load_training_dir(dir)
    };
    let init = match &a.init {
        Some(p) => InitFrom::Checkpoint(p.clone()),
        None => InitFrom::Fresh,
    };
    let pt_path = a.out_dir.join("pretrain.gtrc");
    let ft_path = a.out_dir.join("finetune.gtrc");
    let mut log_rows: Vec<(StageName, LossReport)> = Vec::new();
    let last = match a.stages {
        Stages::Both => {
            let pretrain = StageSpec {
                name: StageName::Pretrain,
                training_set: data(&a.pretrain_data, "--pretrain-data")?,
                train_config: job.pretrain.clone(),
                init_from: init,
                output: Some(pt_path),
            };
            let finetune = StageSpec {
                name: StageName::Finetune,
                training_set: data(&a.finetune_data, "--finetune-data")?,
                train_config: job.finetune.clone(),
                init_from: InitFrom::PreviousStage,
                output: Some(ft_path.clone()),
            };
            let out = run_multi_stage(&pretrain, &finetune, &job.encoder, &vocab)?;
            log_rows.extend(out.pretrain_reports.into_iter().map(|r| (StageName::Pretrain, r)));
            log_rows.extend(out.finetune_reports.into_iter().map(|r| (StageName::Finetune, r)));
            ft_path
        }
        Stages::Pretrain | Stages::Finetune => {
            let (name, set, cfg, path) = if a.stages == Stages::Pretrain {
                (StageName::Pretrain, data(&a.pretrain_data, "--pretrain-data")?, &job.pretrain, pt_path)
            } else {
                (StageName::Finetune, data(&a.finetune_data, "--finetune-data")?, &job.finetune, ft_path)
            };
            let spec = StageSpec {
                name,
                training_set: set,
                train_config: cfg.clone(),
                init_from: init,
                output: Some(path.clone()),
            };
            let out = run_single_stage(&spec, &job.encoder, &vocab)?;
            log_rows.extend(out.reports.into_iter().map(|r| (name, r)));
            path
        }
    };

    let mut log_text = String::from("stage\tstep\tloss\tlr\tgrad_norm\n");
    for (stage, r) in &log_rows {
        log_text.push_str(&format!("{stage}\t{}\n", r.to_tsv()));
    }
    write_text(&a.out_dir.join("train_log.tsv"), &log_text)?;
    let resolved = toml::to_string(&job).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&a.out_dir.join("train.toml"), &resolved)?;
    stdout_line(&format!("{}\n", last.display()))
}

fn load_model(checkpoint: &Path, vocab: &Path) -> Result<(crate::encoder::ParamSet<f32>, EncoderConfig, Vocab)> {
    let (params, config) = load_checkpoint(checkpoint)?;
    let vocab = Vocab::load(vocab)?;
    if vocab.size() != config.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocabulary has {} ids but checkpoint {} expects {}",
            vocab.size(),
            checkpoint.display(),
            config.vocab_size
        )));
    }
    Ok((params, config, vocab))
}

fn encode(a: &EncodeArgs) -> Result<()> {
    let (params, config, vocab) = load_model(&a.checkpoint, &a.vocab)?;
    let corpus = load_corpus(&a.corpus, Format::from_path(&a.corpus))?;
    let store = if a.shard_docs == 0 || corpus.len() <= a.shard_docs {
        encode_corpus(&params, &config, &vocab, &corpus, a.max_len, a.batch)?
    } else {
        encode_sharded(a, &params, &config, &vocab, &corpus)?
    };
    store.save(&a.out)?;
    log::info!("encoded {} documents into {}", store.len(), a.out.display());
    stdout_line(&format!("{}\n", a.out.display()))
}

/// Encodes `shard_docs` documents per shard under `<out>.shards/`. Shards
/// already on disk with the expected ids are reused, so an interrupted run
/// resumes where it stopped.
fn encode_sharded(
    a: &EncodeArgs,
    params: &crate::encoder::ParamSet<f32>,
    config: &EncoderConfig,
    vocab: &Vocab,
    corpus: &Corpus,
) -> Result<EmbeddingStore> {
    let mut dir = a.out.clone().into_os_string();
    dir.push(".shards");
    let dir = PathBuf::from(dir);
    mkdir(&dir)?;
    let mut shards = Vec::new();
    for (i, docs) in corpus.documents().chunks(a.shard_docs).enumerate() {
        let path = dir.join(format!("shard-{i:05}.gtre"));
        let want: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
        let reused = match EmbeddingStore::load(&path) {
            Ok(s) if s.doc_ids() == want.as_slice() => Some(s),
            _ => None,
        };
        let shard = match reused {
            Some(s) => {
                log::info!("reusing {}", path.display());
                s
            }
            None => {
                let part = Corpus::from_documents(docs.iter().cloned())?;
                let s = encode_corpus(params, config, vocab, &part, a.max_len, a.batch)?;
                s.save(&path)?;
                s
            }
        };
        shards.push(shard);
    }
    let store = EmbeddingStore::concat(&shards)?;
    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(store)
}

fn index(a: &IndexArgs, seed: Option<u64>) -> Result<()> {
    let store = EmbeddingStore::load(&a.store)?;
    let ivf = build_ivf(&store, a.clusters, seed.unwrap_or(0), a.iters)?;
    ivf.save(&a.out)?;
    log::info!(
        "{} clusters over {} rows after {} iterations",
        ivf.num_clusters(),
        store.len(),
        ivf.iterations()
    );
    stdout_line(&format!("{}\n", a.out.display()))
}

fn read_search_queries(a: &SearchArgs) -> Result<Vec<Query>> {
    match (&a.query, &a.queries) {
        (Some(text), _) => Ok(vec![Query::new(a.query_id.clone(), text.clone())]),
        (None, Some(p)) => load_queries(p, Format::from_path(p)),
        (None, None) => Err(Error::InvalidArgument("give --query or --queries".into())),
    }
}

fn search(a: &SearchArgs) -> Result<()> {
    let queries = read_search_queries(a)?;
    let lists = if a.bm25 {
        let path = a.corpus.as_ref().expect("clap enforces --corpus with --bm25");
        let corpus = load_corpus(path, Format::from_path(path))?;
        let index = build_bm25_index(&corpus, DEFAULT_K1, DEFAULT_B)?;
        queries
            .iter()
            .map(|q| RankedList::new(q.id.clone(), bm25_search(&index, &q.text, a.k), a.k))
            .collect()
    } else {
        dense_search(a, &queries)?
    };
    match &a.out {
        Some(p) => crate::eval::write_run_file(&lists, &a.tag, p),
        None => {
            let mut out = BufWriter::new(std::io::stdout().lock());
            write_run(&lists, &a.tag, &mut out)
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn dense_search(a: &SearchArgs, queries: &[Query]) -> Result<Vec<RankedList>> {
    let store_path = a.store.as_ref().expect("clap enforces --store without --bm25");
    let missing = |flag: &str, env: &str| Error::InvalidArgument(format!("dense search needs {flag} or {env}"));
    let checkpoint = a.checkpoint.as_ref().ok_or_else(|| missing("--checkpoint", "GTR_CHECKPOINT"))?;
    let vocab = a.vocab.as_ref().ok_or_else(|| missing("--vocab", "GTR_VOCAB"))?;
    let (params, config, vocab) = load_model(checkpoint, vocab)?;
    let store = EmbeddingStore::load(store_path)?;
    if !store.is_empty() && store.dim() != config.bottleneck_dim {
        return Err(Error::InvalidConfig(format!(
            "store dimension {} differs from the checkpoint's {}",
            store.dim(),
            config.bottleneck_dim
        )));
    }
    let max_len = a.max_len.min(config.max_len);
    let mut encoded: Vec<(String, Vec<f32>)> = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(a.batch.max(1)) {
        let seqs = chunk
            .iter()
            .map(|q| vocab.encode(&q.text, max_len))
            .collect::<Result<Vec<TokenSequence>>>()?;
        let emb = encode_batch(&params, &config, &seqs)?;
        for (i, q) in chunk.iter().enumerate() {
            encoded.push((q.id.clone(), emb.matrix().row(i).to_vec()));
        }
    }
    match &a.ivf {
        None => search_batch(&store, &encoded, a.k),
        Some(p) => {
            let ivf = IvfIndex::load(p, &store)?;
            encoded
                .iter()
                .map(|(id, q)| Ok(RankedList::new(id.clone(), search_ivf(&ivf, &store, q, a.k, a.n_probe)?, a.k)))
                .collect()
        }
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.run.len() != a.qrels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} run files but {} qrels files",
            a.run.len(),
            a.qrels.len()
        )));
    }
    if !a.dataset.is_empty() && a.dataset.len() != a.run.len() {
        return Err(Error::InvalidArgument("give one --dataset per --run".into()));
    }
    let metrics = MetricSpec::parse_list(&a.metrics)?;
    let k_max = a
        .k_max
        .unwrap_or_else(|| metrics.iter().map(|m| m.k).max().unwrap_or(1));
    let opts = EvalOptions {
        include_zero_relevant: !a.skip_zero_relevant,
    };
    let mut per = Vec::new();
    let mut runs = Vec::new();
    for (i, (run_path, qrels_path)) in a.run.iter().zip(&a.qrels).enumerate() {
        let name = match a.dataset.get(i) {
            Some(n) => n.clone(),
            None => run_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("run{i}")),
        };
        let run = RunResult::new(name, read_run_file(run_path)?, k_max);
        per.push(evaluate_run_with(&run, &load_qrels(qrels_path)?, &metrics, opts)?);
        runs.push(run);
    }
    let report = aggregate_reports(per, a.exclude.as_deref())?;
    let mut table = report.to_table();
    if let Some(p) = &a.corpus {
        if runs.len() != 1 {
            return Err(Error::InvalidArgument("--corpus needs exactly one --run".into()));
        }
        let corpus = load_corpus(p, Format::from_path(p))?;
        let m = median_topk_doc_length(&runs[0], &corpus, a.length_k)?;
        table.push_str(&format!("median_top{}_doc_length\t{m}\n", a.length_k));
    }
    if let Some(p) = &a.out {
        write_text(p, &table)?;
    }
    if let Some(p) = &a.key_values {
        write_text(p, &report.to_key_values())?;
    }
    stdout_line(&table)
}

fn experiment_spec(spec: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec: ExperimentSpec = load_job(spec, overrides)?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
        spec.synthetic.seed = s;
    }
    Ok(spec)
}

fn experiment(a: &ExperimentArgs, seed: Option<u64>) -> Result<()> {
    let spec = experiment_spec(a.spec.as_deref(), &a.overrides, seed)?;
    mkdir(&a.out_dir)?;
    if a.kind == ExperimentKind::Generate {
        let bench = generate(&spec.synthetic)?;
        bench.write_dir(&a.out_dir)?;
        return stdout_line(&format!("{}\n", a.out_dir.display()));
    }
    let largest = spec.configs.len().saturating_sub(1);
    let mut lab = Lab::new(spec)?;
    let kinds: &[ExperimentKind] = match a.kind {
        ExperimentKind::All => &[
            ExperimentKind::Sweep,
            ExperimentKind::Ablation,
            ExperimentKind::DataEfficiency,
            ExperimentKind::Bm25,
        ],
        ref k => std::slice::from_ref(k),
    };
    for kind in kinds {
        let start = Instant::now();
        let report = match kind {
            ExperimentKind::Sweep => lab.scaling_sweep()?,
            ExperimentKind::Ablation => lab.ablation(largest)?,
            ExperimentKind::DataEfficiency => lab.data_efficiency(largest)?,
            ExperimentKind::Bm25 => lab.bm25_comparison()?,
            ExperimentKind::Generate | ExperimentKind::All => unreachable!("handled above"),
        };
        report.write(&a.out_dir)?;
        log::info!("{} finished in {:.1}s", report.name, start.elapsed().as_secs_f64());
        stdout_line(&report.to_csv())?;
    }
    Ok(())
}

fn bench(a: &BenchArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    match a.kind {
        BenchKind::Encode => {
            let configs: Vec<EncoderConfig> = match &a.spec {
                Some(_) => experiment_spec(a.spec.as_deref(), &a.overrides, None)?
                    .configs
                    .into_iter()
                    .map(|c| EncoderConfig {
                        vocab_size: a.vocab_size,
                        ..c
                    })
                    .collect(),
                None => EncoderConfig::desk_sweep(a.vocab_size),
            };
            let rows = bench_encode_latency(&configs, a.batch_size, a.input_len, a.trials, a.warmup, seed)?;
            stdout_line(&latency_table(&rows))
        }
        BenchKind::Scan => {
            if a.dim == 0 || a.num_queries == 0 {
                return Err(Error::InvalidArgument("--dim and --num-queries must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut random_rows = |n: usize| -> Vec<f32> {
                let mut v: Vec<f32> = (0..n * a.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                for r in v.chunks_exact_mut(a.dim) {
                    normalize_in_place(r);
                }
                v
            };
            let ids = (0..a.rows).map(|i| format!("d{i}")).collect();
            let store = EmbeddingStore::from_rows(a.dim, random_rows(a.rows), ids)?;
            let queries = random_rows(a.num_queries);
            let mut out = String::from("block\tms_per_query\n");
            for &block in &a.blocks {
                let start = Instant::now();
                for q in queries.chunks_exact(a.dim) {
                    std::hint::black_box(search_exact_blocked(&store, q, 10, block)?);
                }
                let ms = start.elapsed().as_secs_f64() * 1e3 / a.num_queries as f64;
                out.push_str(&format!("{block}\t{ms:.3}\n"));
            }
            stdout_line(&out)
        }
    }
}
