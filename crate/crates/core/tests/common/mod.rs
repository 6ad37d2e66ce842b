//! Helpers for driving the `gtr` binary from integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_JOB: &str = "\
[encoder]
model_dim = 16
ffn_dim = 32
num_layers = 1
num_heads = 2
bottleneck_dim = 16
max_len = 32

[pretrain]
steps = 200
batch_size = 16
query_max_len = 32
doc_max_len = 32

[finetune]
steps = 200
batch_size = 16
query_max_len = 32
doc_max_len = 32
";

/// Runs the binary in `dir` with path overrides cleared from the environment.
pub fn gtr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtr"))
        .args(args)
        .current_dir(dir)
        .env_remove("GTR_CHECKPOINT")
        .env_remove("GTR_VOCAB")
        .output()
        .expect("spawn gtr")
}

/// Like [`gtr`] but panics with stderr unless the exit code is 0.
pub fn gtr_ok(dir: &Path, args: &[&str]) -> String {
    let out = gtr(dir, args);
    assert!(
        out.status.success(),
        "gtr {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// generate → build-vocab → train → encode → index → search → eval on the
/// held-out synthetic set. Returns every artifact the run produced.
pub fn run_pipeline(dir: &Path, seed: u64) -> Vec<PathBuf> {
    let seed = seed.to_string();
    let common = ["--threads", "1", "--seed", seed.as_str()];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(&common).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        gtr_ok(dir, &refs)
    };

    std::fs::write(dir.join("job.toml"), TINY_JOB).unwrap();
    run(with(&["experiment", "--kind", "generate", "--out-dir", "bench"]));
    run(with(&[
        "build-vocab",
        "--corpus", "bench/pretrain/corpus.jsonl",
        "--corpus", "bench/finetune/corpus.jsonl",
        "--corpus", "bench/synth-in/corpus.jsonl",
        "--corpus", "bench/synth-out/corpus.jsonl",
        "--queries", "bench/pretrain/queries.jsonl",
        "--queries", "bench/finetune/queries.jsonl",
        "--out", "vocab.tsv",
    ]));
    run(with(&[
        "train",
        "--vocab", "vocab.tsv",
        "--config", "job.toml",
        "--pretrain-data", "bench/pretrain",
        "--finetune-data", "bench/finetune",
        "--out-dir", "model",
    ]));
    run(with(&[
        "encode",
        "--checkpoint", "model/finetune.gtrc",
        "--vocab", "vocab.tsv",
        "--corpus", "bench/synth-out/corpus.jsonl",
        "--max-len", "32",
        "--out", "store.gtre",
    ]));
    run(with(&["index", "--store", "store.gtre", "--clusters", "8", "--out", "ivf.gtri"]));
    run(with(&[
        "search",
        "--store", "store.gtre",
        "--checkpoint", "model/finetune.gtrc",
        "--vocab", "vocab.tsv",
        "--queries", "bench/synth-out/queries.jsonl",
        "--k", "100",
        "--out", "run_exact.txt",
    ]));
    run(with(&[
        "search",
        "--store", "store.gtre",
        "--checkpoint", "model/finetune.gtrc",
        "--vocab", "vocab.tsv",
        "--queries", "bench/synth-out/queries.jsonl",
        "--k", "100",
        "--ivf", "ivf.gtri",
        "--n-probe", "4",
        "--out", "run_ivf.txt",
    ]));
    run(with(&[
        "eval",
        "--run", "run_exact.txt",
        "--run", "run_ivf.txt",
        "--qrels", "bench/synth-out/qrels.tsv",
        "--qrels", "bench/synth-out/qrels.tsv",
        "--metrics", "ndcg@10,recall@100,mrr@10",
        "--out", "report.tsv",
        "--key-values", "report_kv.txt",
    ]));
    [
        "vocab.tsv",
        "model/pretrain.gtrc",
        "model/finetune.gtrc",
        "model/train_log.tsv",
        "model/train.toml",
        "store.gtre",
        "ivf.gtri",
        "run_exact.txt",
        "run_ivf.txt",
        "report.tsv",
        "report_kv.txt",
    ]
    .iter()
    .map(|p| dir.join(p))
    .collect()
}
