//! Per-query graded relevance metrics over a ranked list.

use std::fmt;
use std::str::FromStr;

use crate::corpus::QrelSet;
use crate::error::{Error, Result};
use crate::index::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Gain {
    /// `g(x) = x`, the trec_eval convention.
    #[default]
    Linear,
    /// `g(x) = 2^x - 1`.
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

/// DCG of the top `k` hits over the DCG of the grade-sorted ideal list.
/// Zero when the query has no positively graded document.
pub fn ndcg_at_k(ranked: &RankedList, qrels: &QrelSet, k: usize, gain: Gain) -> f64 {
    let qid = ranked.query_id.as_str();
    let dcg: f64 = ranked
        .hits
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, h)| gain.apply(qrels.grade(qid, &h.doc_id)) * discount(r))
        .sum();
    let mut ideal: Vec<u32> = qrels.for_query(qid).map(|(_, g)| g).filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &g)| gain.apply(g) * discount(r))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Fraction of documents graded `>= min_grade` found in the top `k`.
pub fn recall_at_k(ranked: &RankedList, qrels: &QrelSet, k: usize, min_grade: u32) -> f64 {
    let qid = ranked.query_id.as_str();
    let min_grade = min_grade.max(1);
    let total = qrels.for_query(qid).filter(|&(_, g)| g >= min_grade).count();
    if total == 0 {
        return 0.0;
    }
    let found = ranked
        .hits
        .iter()
        .take(k)
        .filter(|h| qrels.grade(qid, &h.doc_id) >= min_grade)
        .count();
    found as f64 / total as f64
}

/// Reciprocal rank of the first hit graded `>= min_grade` within `k`.
pub fn mrr_at_k(ranked: &RankedList, qrels: &QrelSet, k: usize, min_grade: u32) -> f64 {
    let qid = ranked.query_id.as_str();
    let min_grade = min_grade.max(1);
    ranked
        .hits
        .iter()
        .take(k)
        .position(|h| qrels.grade(qid, &h.doc_id) >= min_grade)
        .map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Ndcg(Gain),
    Recall,
    Mrr,
}

/// A metric at a depth, written `ndcg@10`, `ndcg_exp@10`, `recall@100` or
/// `mrr@10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub k: usize,
    pub min_grade: u32,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, k: usize) -> Self {
        MetricSpec { kind, k, min_grade: 1 }
    }

    pub fn score(&self, ranked: &RankedList, qrels: &QrelSet) -> f64 {
        match self.kind {
            MetricKind::Ndcg(g) => ndcg_at_k(ranked, qrels, self.k, g),
            MetricKind::Recall => recall_at_k(ranked, qrels, self.k, self.min_grade),
            MetricKind::Mrr => mrr_at_k(ranked, qrels, self.k, self.min_grade),
        }
    }

    /// Parses a comma-separated list such as `ndcg@10,recall@100`.
    pub fn parse_list(s: &str) -> Result<Vec<MetricSpec>> {
        s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Ndcg(Gain::Linear) => "ndcg",
            MetricKind::Ndcg(Gain::Exponential) => "ndcg_exp",
            MetricKind::Recall => "recall",
            MetricKind::Mrr => "mrr",
        };
        write!(f, "{name}@{}", self.k)
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown metric `{s}`; expected e.g. ndcg@10, ndcg_exp@10, recall@100, mrr@10"));
        let (name, depth) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = depth.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(Error::InvalidArgument(format!("metric `{s}` needs depth >= 1")));
        }
        let kind = match name.to_ascii_lowercase().as_str() {
            "ndcg" => MetricKind::Ndcg(Gain::Linear),
            "ndcg_exp" => MetricKind::Ndcg(Gain::Exponential),
            "recall" => MetricKind::Recall,
            "mrr" => MetricKind::Mrr,
            _ => return Err(bad()),
        };
        Ok(MetricSpec::new(kind, k))
    }
}
