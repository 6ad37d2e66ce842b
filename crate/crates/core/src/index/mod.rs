//! Embedding store and top-k search by dot product over unit rows.
//!
//! Ordering everywhere is score descending, then doc id ascending, so a
//! result list is a total order independent of scan order or thread count.

mod ivf;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use rayon::prelude::*;

pub use ivf::{build_ivf, search_ivf, IvfIndex};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::corpus::Corpus;
use crate::encoder::{encode_batch, EmbeddingBatch, EncoderConfig, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, normalize_in_place};
use crate::tokenizer::Vocab;

pub const STORE_MAGIC: &[u8; 4] = b"GTRE";
pub const STORE_VERSION: u32 = 1;
/// Rows scored per block by the exact scan.
pub const DEFAULT_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub score: f32,
}

/// One query's hits, best first, at requested depth `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
    pub k: usize,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, hits: Vec<Hit>, k: usize) -> Self {
        RankedList {
            query_id: query_id.into(),
            hits,
            k,
        }
    }
}

/// Row-major `N × d` unit vectors with aligned, unique doc ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    doc_ids: Vec<String>,
    data: Vec<f32>,
    /// Position of each row's id in sorted id order; the tie-break key.
    id_rank: Vec<u32>,
}

fn id_ranks(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut rank = vec![0u32; ids.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as u32;
    }
    rank
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(Error::InvalidArgument(format!(
                "duplicate doc id `{id}` at rows {prev} and {i}"
            )));
        }
    }
    Ok(())
}

impl EmbeddingStore {
    /// Builds from raw rows. Rows are re-normalized; NaN, infinities and
    /// duplicate ids are rejected.
    pub fn from_rows(dim: usize, mut data: Vec<f32>, doc_ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        if data.len() != dim * doc_ids.len() {
            return Err(Error::Shape(format!(
                "{} values for {} ids of dim {dim}",
                data.len(),
                doc_ids.len()
            )));
        }
        check_unique(&doc_ids)?;
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("row {i} (`{}`)", doc_ids[i])));
            }
            if normalize_in_place(row) == 0.0 {
                log::warn!("row {i} (`{}`) is zero; stored as the first basis vector", doc_ids[i]);
            }
        }
        let id_rank = id_ranks(&doc_ids);
        Ok(EmbeddingStore {
            dim,
            doc_ids,
            data,
            id_rank,
        })
    }

    /// Joins stores row-wise, keeping every row bit for bit.
    pub fn concat(parts: &[EmbeddingStore]) -> Result<Self> {
        let dim = parts.first().map_or(1, |p| p.dim);
        if let Some(p) = parts.iter().find(|p| p.dim != dim) {
            return Err(Error::Shape(format!("cannot join dims {dim} and {}", p.dim)));
        }
        let doc_ids: Vec<String> = parts.iter().flat_map(|p| p.doc_ids.iter().cloned()).collect();
        check_unique(&doc_ids)?;
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        let id_rank = id_ranks(&doc_ids);
        Ok(EmbeddingStore {
            dim,
            doc_ids,
            data,
            id_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(STORE_MAGIC);
        w.u32(STORE_VERSION);
        w.u64(self.len() as u64);
        w.u32(self.dim as u32);
        for id in &self.doc_ids {
            w.str(id);
        }
        w.f32s(&self.data);
        w.buf
    }

    /// Parses a store file. Rows are taken verbatim, so a round trip is
    /// bit-exact; norms are checked, not rewritten.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(STORE_MAGIC)?;
        r.version(STORE_VERSION)?;
        let n = r.usize("row count")?;
        let dim = r.u32("dim")? as usize;
        let mut doc_ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            doc_ids.push(r.str("doc id")?);
        }
        let total = n.checked_mul(dim).ok_or_else(|| r.corrupt("matrix size overflows"))?;
        let at = r.offset();
        let data = r.f32s(total, "matrix")?;
        r.finish()?;
        for (i, row) in data.chunks_exact(dim.max(1)).enumerate() {
            let nrm = norm(row);
            if !nrm.is_finite() || (nrm - 1.0).abs() > 1e-4 {
                return Err(Error::Corrupt {
                    offset: at + (i * dim * 4) as u64,
                    reason: format!("row {i} has norm {nrm}"),
                });
            }
        }
        let id_rank = id_ranks(&doc_ids);
        let mut seen = HashMap::with_capacity(n);
        for id in &doc_ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(r.corrupt(format!("duplicate doc id `{id}`")));
            }
        }
        Ok(EmbeddingStore {
            dim,
            doc_ids,
            data,
            id_rank,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Concatenates encoded batches in order and pairs them with `doc_ids`.
pub fn build_store<I>(batches: I, doc_ids: Vec<String>) -> Result<EmbeddingStore>
where
    I: IntoIterator<Item = EmbeddingBatch<f32>>,
{
    let mut data = Vec::new();
    let mut dim = None;
    for b in batches {
        if b.is_empty() {
            continue;
        }
        match dim {
            None => dim = Some(b.dim()),
            Some(d) if d != b.dim() => {
                return Err(Error::Shape(format!("batch dim {} differs from {d}", b.dim())));
            }
            _ => {}
        }
        data.extend_from_slice(b.matrix().as_slice());
    }
    let dim = match dim {
        Some(d) => d,
        None if doc_ids.is_empty() => 1,
        None => return Err(Error::Shape(format!("no rows for {} ids", doc_ids.len()))),
    };
    EmbeddingStore::from_rows(dim, data, doc_ids)
}

/// One row per document in corpus order, encoded `batch` documents at a time.
pub fn encode_corpus(
    params: &ParamSet<f32>,
    config: &EncoderConfig,
    vocab: &Vocab,
    corpus: &Corpus,
    max_len: usize,
    batch: usize,
) -> Result<EmbeddingStore> {
    if vocab.size() != config.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocabulary has {} ids but the checkpoint expects {}",
            vocab.size(),
            config.vocab_size
        )));
    }
    let max_len = max_len.min(config.max_len);
    let mut batches = Vec::new();
    for docs in corpus.documents().chunks(batch.max(1)) {
        let seqs = docs
            .iter()
            .map(|d| vocab.encode(&d.full_text(), max_len))
            .collect::<Result<Vec<_>>>()?;
        batches.push(encode_batch(params, config, &seqs)?);
    }
    let ids = corpus.documents().iter().map(|d| d.id.clone()).collect();
    build_store(batches, ids)
}

/// Heap entry ordered so that the worst candidate compares greatest.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub score: f32,
    pub rank: u32,
    pub row: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then(self.rank.cmp(&other.rank))
    }
}

/// Bounded top-k accumulator.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

fn check_query(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if !store.is_empty() && query.len() != store.dim {
        return Err(Error::Shape(format!(
            "query has dim {}, store has {}",
            query.len(),
            store.dim
        )));
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("query vector".into()));
    }
    Ok(())
}

pub(crate) fn to_hits(store: &EmbeddingStore, cands: Vec<Candidate>) -> Vec<Hit> {
    cands
        .into_iter()
        .map(|c| Hit {
            doc_id: store.doc_ids[c.row as usize].clone(),
            score: c.score,
        })
        .collect()
}

fn scan_rows(store: &EmbeddingStore, query: &[f32], rows: std::ops::Range<usize>, block: usize, top: &mut TopK) {
    let mut scores = vec![0f32; block.min(rows.len())];
    let mut start = rows.start;
    while start < rows.end {
        let end = (start + block).min(rows.end);
        for (s, i) in scores.iter_mut().zip(start..end) {
            *s = dot(store.row(i), query);
        }
        for (j, &score) in scores[..end - start].iter().enumerate() {
            let row = start + j;
            top.push(Candidate {
                score,
                rank: store.id_rank[row],
                row: row as u32,
            });
        }
        start = end;
    }
}

/// Exact top-k with a configurable scan block.
pub fn search_exact_blocked(store: &EmbeddingStore, query: &[f32], k: usize, block: usize) -> Result<Vec<Hit>> {
    check_query(store, query, k)?;
    let mut top = TopK::new(k);
    scan_rows(store, query, 0..store.len(), block.max(1), &mut top);
    Ok(to_hits(store, top.into_sorted()))
}

pub fn search_exact(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Vec<Hit>> {
    search_exact_blocked(store, query, k, DEFAULT_BLOCK)
}

/// Exact top-k for many queries. The store is split into row shards that
/// are scanned in parallel; per-shard candidates are merged under the same
/// total order, so the output does not depend on the worker count.
pub fn search_batch(store: &EmbeddingStore, queries: &[(String, Vec<f32>)], k: usize) -> Result<Vec<RankedList>> {
    for (_, q) in queries {
        check_query(store, q, k)?;
    }
    let shard = DEFAULT_BLOCK;
    let starts: Vec<usize> = (0..store.len()).step_by(shard).collect();
    let partial: Vec<Vec<Vec<Candidate>>> = starts
        .par_iter()
        .map(|&s| {
            let rows = s..(s + shard).min(store.len());
            queries
                .iter()
                .map(|(_, q)| {
                    let mut top = TopK::new(k);
                    scan_rows(store, q, rows.clone(), shard, &mut top);
                    top.into_sorted()
                })
                .collect()
        })
        .collect();
    Ok(queries
        .iter()
        .enumerate()
        .map(|(qi, (qid, _))| {
            let mut top = TopK::new(k);
            for shard_out in &partial {
                for &c in &shard_out[qi] {
                    top.push(c);
                }
            }
            RankedList::new(qid.clone(), to_hits(store, top.into_sorted()), k)
        })
        .collect())
}
