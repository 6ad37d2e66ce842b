//! BM25 over an in-memory inverted index.
//!
//! Terms come from the tokenizer's word rule, so lexical and dense
//! retrieval see the same words. No stopwords, no stemming.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::index::Hit;
use crate::tokenizer::words;

pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    /// term -> (doc ordinal, term frequency), ordinals ascending.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    doc_ids: Vec<String>,
    avg_doc_len: f64,
    k1: f64,
    b: f64,
}

impl InvertedIndex {
    pub fn postings(&self, term: &str) -> Option<&[(u32, u32)]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        let n = self.num_docs() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

pub fn build_bm25_index(corpus: &Corpus, k1: f64, b: f64) -> Result<InvertedIndex> {
    if !(k1 >= 0.0) || !(0.0..=1.0).contains(&b) {
        return Err(Error::InvalidArgument(format!(
            "BM25 needs k1 >= 0 and 0 <= b <= 1, got k1={k1}, b={b}"
        )));
    }
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    for (ord, doc) in corpus.iter().enumerate() {
        let mut tf: HashMap<String, u32> = HashMap::new();
        let mut len = 0u32;
        for w in words(&doc.full_text()) {
            *tf.entry(w).or_default() += 1;
            len += 1;
        }
        doc_lengths.push(len);
        for (term, count) in tf {
            postings.entry(term).or_default().push((ord as u32, count));
        }
    }
    let avg_doc_len = if doc_lengths.is_empty() {
        0.0
    } else {
        doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64
    };
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
        avg_doc_len,
        k1,
        b,
    })
}

/// Top-k documents sharing at least one term with the query. Repeated
/// query words contribute once per occurrence. Ties go to the smaller id.
pub fn bm25_search(index: &InvertedIndex, query_text: &str, k: usize) -> Vec<Hit> {
    let mut scores: HashMap<u32, f64> = HashMap::new();
    for term in words(query_text) {
        let Some(list) = index.postings.get(&term) else {
            continue;
        };
        let idf = index.idf(&term);
        for &(doc, tf) in list {
            let tf = f64::from(tf);
            let len_norm = if index.avg_doc_len > 0.0 {
                f64::from(index.doc_lengths[doc as usize]) / index.avg_doc_len
            } else {
                0.0
            };
            let part = tf * (index.k1 + 1.0) / (tf + index.k1 * (1.0 - index.b + index.b * len_norm));
            *scores.entry(doc).or_default() += idf * part;
        }
    }
    let mut hits: Vec<Hit> = scores
        .into_iter()
        .map(|(doc, s)| Hit {
            doc_id: index.doc_ids[doc as usize].clone(),
            score: s as f32,
        })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    hits.truncate(k);
    hits
}
