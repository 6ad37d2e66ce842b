//! Desk-scale dense retrieval toolkit.
//!
//! A single-tower dual encoder (queries and documents share one parameter
//! set) with a fixed-size bottleneck, trained with an in-batch sampled
//! softmax over hard negatives in a two-stage pretrain/fine-tune schedule.
//! Around it sit exact and IVF vector search, a BM25 baseline, graded
//! relevance metrics and runnable scaling / ablation / data-efficiency
//! experiments on a seeded synthetic benchmark.
//!
//! Module map:
//!
//! - [`corpus`]: BEIR-style documents, queries, qrels and training triples
//! - [`tokenizer`]: word vocabulary with hashed OOV buckets
//! - [`encoder`]: transformer / bag-MLP tower, forward and backward passes
//! - [`trainer`]: contrastive losses, Adam with linear decay, stages
//! - [`index`]: embedding store, blocked exact search, IVF
//! - [`lexical`]: BM25 over an inverted index
//! - [`eval`]: NDCG / Recall / MRR, aggregation, doc-length analysis
//! - [`experiments`]: synthetic benchmark and experiment runners
//! - [`cli`]: the `gtr` command line front-end

mod binio;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod index;
pub mod lexical;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
