//! Run scoring, cross-dataset aggregation and run-level analyses.

mod metrics;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub use metrics::{mrr_at_k, ndcg_at_k, recall_at_k, Gain, MetricKind, MetricSpec};

use crate::corpus::{Corpus, QrelSet};
use crate::error::{Error, Result};
pub use crate::index::{Hit, RankedList};

/// Ranked lists for one dataset, retained to depth `k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub dataset: String,
    pub lists: Vec<RankedList>,
    pub k_max: usize,
}

impl RunResult {
    pub fn new(dataset: impl Into<String>, lists: Vec<RankedList>, k_max: usize) -> Self {
        RunResult {
            dataset: dataset.into(),
            lists,
            k_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Count queries without any positively graded document as zeros.
    pub include_zero_relevant: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            include_zero_relevant: true,
        }
    }
}

/// Mean metric values over the judged queries of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMetrics {
    pub dataset: String,
    pub num_queries: usize,
    /// `(metric name, mean)` in the order the metrics were requested.
    pub values: Vec<(String, f64)>,
}

impl DatasetMetrics {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.values.iter().find(|(m, _)| m == metric).map(|&(_, v)| v)
    }
}

pub fn evaluate_run(run: &RunResult, qrels: &QrelSet, metrics: &[MetricSpec]) -> Result<DatasetMetrics> {
    evaluate_run_with(run, qrels, metrics, EvalOptions::default())
}

/// Every judged query is scored; queries missing from the run score as
/// empty rankings. Unjudged retrieved documents have grade 0.
pub fn evaluate_run_with(
    run: &RunResult,
    qrels: &QrelSet,
    metrics: &[MetricSpec],
    opts: EvalOptions,
) -> Result<DatasetMetrics> {
    if metrics.is_empty() {
        return Err(Error::InvalidArgument("no metrics requested".into()));
    }
    if let Some(m) = metrics.iter().find(|m| m.k > run.k_max) {
        return Err(Error::InvalidArgument(format!(
            "metric {m} needs depth {} but run `{}` keeps only {}",
            m.k, run.dataset, run.k_max
        )));
    }
    let by_query: HashMap<&str, &RankedList> = run.lists.iter().map(|l| (l.query_id.as_str(), l)).collect();
    let mut sums = vec![0f64; metrics.len()];
    let mut n = 0usize;
    for qid in qrels.query_ids() {
        if !opts.include_zero_relevant && qrels.for_query(qid).all(|(_, g)| g == 0) {
            continue;
        }
        let empty;
        let list = match by_query.get(qid) {
            Some(l) => *l,
            None => {
                empty = RankedList::new(qid, Vec::new(), run.k_max);
                &empty
            }
        };
        for (s, m) in sums.iter_mut().zip(metrics) {
            *s += m.score(list, qrels);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument(format!("dataset `{}` has no judged queries", run.dataset)));
    }
    Ok(DatasetMetrics {
        dataset: run.dataset.clone(),
        num_queries: n,
        values: metrics
            .iter()
            .zip(sums)
            .map(|(m, s)| (m.to_string(), s / n as f64))
            .collect(),
    })
}

/// Per-dataset rows plus an unweighted average, and optionally a second
/// average that leaves one dataset out.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub metrics: Vec<String>,
    pub datasets: Vec<DatasetMetrics>,
    pub average: Vec<f64>,
    pub average_without: Option<(String, Vec<f64>)>,
}

fn mean_of(rows: &[&DatasetMetrics], cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|c| rows.iter().map(|r| r.values[c].1).sum::<f64>() / rows.len() as f64)
        .collect()
}

pub fn aggregate_reports(per_dataset: Vec<DatasetMetrics>, exclude: Option<&str>) -> Result<MetricsReport> {
    let first = per_dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("no datasets to aggregate".into()))?;
    let metrics: Vec<String> = first.values.iter().map(|(m, _)| m.clone()).collect();
    for d in &per_dataset {
        if d.values.iter().map(|(m, _)| m).ne(metrics.iter()) {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` reports different metrics than `{}`",
                d.dataset, first.dataset
            )));
        }
    }
    let all: Vec<&DatasetMetrics> = per_dataset.iter().collect();
    let average = mean_of(&all, metrics.len());
    let average_without = match exclude {
        None => None,
        Some(name) => {
            if !per_dataset.iter().any(|d| d.dataset == name) {
                return Err(Error::InvalidArgument(format!("cannot exclude unknown dataset `{name}`")));
            }
            let rest: Vec<&DatasetMetrics> = per_dataset.iter().filter(|d| d.dataset != name).collect();
            if rest.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "excluding `{name}` leaves no datasets to average"
                )));
            }
            Some((name.to_string(), mean_of(&rest, metrics.len())))
        }
    };
    Ok(MetricsReport {
        metrics,
        datasets: per_dataset,
        average,
        average_without,
    })
}

impl MetricsReport {
    /// Tab-separated table: one row per dataset, then `Avg` and, if set,
    /// `Avg w/o <name>`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("dataset");
        for m in &self.metrics {
            write!(out, "\t{m}").unwrap();
        }
        out.push('\n');
        let mut row = |label: &str, vals: &mut dyn Iterator<Item = f64>| {
            out.push_str(label);
            for v in vals {
                write!(out, "\t{v:.4}").unwrap();
            }
            out.push('\n');
        };
        for d in &self.datasets {
            row(&d.dataset, &mut d.values.iter().map(|&(_, v)| v));
        }
        row("Avg", &mut self.average.iter().copied());
        if let Some((name, vals)) = &self.average_without {
            row(&format!("Avg w/o {name}"), &mut vals.iter().copied());
        }
        out
    }

    /// `dataset.metric=value` lines, then `avg.metric=value`.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for d in &self.datasets {
            writeln!(out, "{}.num_queries={}", d.dataset, d.num_queries).unwrap();
            for (m, v) in &d.values {
                writeln!(out, "{}.{m}={v:.6}", d.dataset).unwrap();
            }
        }
        for (m, v) in self.metrics.iter().zip(&self.average) {
            writeln!(out, "avg.{m}={v:.6}").unwrap();
        }
        if let Some((name, vals)) = &self.average_without {
            for (m, v) in self.metrics.iter().zip(vals) {
                writeln!(out, "avg_without_{name}.{m}={v:.6}").unwrap();
            }
        }
        out
    }
}

/// TREC run lines: `qid Q0 doc_id rank score tag`.
pub fn write_run(lists: &[RankedList], tag: &str, out: &mut impl Write) -> std::io::Result<()> {
    for l in lists {
        for (r, h) in l.hits.iter().enumerate() {
            writeln!(out, "{} Q0 {} {} {} {tag}", l.query_id, h.doc_id, r + 1, h.score)?;
        }
    }
    Ok(())
}

pub fn write_run_file(lists: &[RankedList], tag: &str, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_run(lists, tag, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a TREC run. Lists come back in first-appearance order with hits
/// sorted by rank; each list's `k` is its length.
pub fn read_run_file(path: &Path) -> Result<Vec<RankedList>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(usize, Hit)>> = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(bad("expected `qid Q0 doc_id rank score tag`"));
        }
        let rank: usize = cols[3].parse().map_err(|_| bad("rank is not an integer"))?;
        let score: f32 = cols[4].parse().map_err(|_| bad("score is not a number"))?;
        let entry = rows.entry(cols[0].to_string()).or_insert_with(|| {
            order.push(cols[0].to_string());
            Vec::new()
        });
        entry.push((
            rank,
            Hit {
                doc_id: cols[2].to_string(),
                score,
            },
        ));
    }
    Ok(order
        .into_iter()
        .map(|qid| {
            let mut hits = rows.remove(&qid).unwrap_or_default();
            hits.sort_by_key(|(r, _)| *r);
            let hits: Vec<Hit> = hits.into_iter().map(|(_, h)| h).collect();
            let k = hits.len();
            RankedList::new(qid, hits, k)
        })
        .collect())
}

/// Median word count over the pooled top-`k` hits of every query. An even
/// pool takes the mean of the two middle values.
pub fn median_topk_doc_length(run: &RunResult, corpus: &Corpus, k: usize) -> Result<f64> {
    let mut pool = Vec::new();
    for list in &run.lists {
        for h in list.hits.iter().take(k) {
            let doc = corpus
                .get(&h.doc_id)
                .ok_or_else(|| Error::UnknownDocument(h.doc_id.clone()))?;
            pool.push(doc.word_count);
        }
    }
    median(&mut pool).ok_or_else(|| Error::InvalidArgument("run has no hits to measure".into()))
}

pub fn median(values: &mut [usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    })
}

#[cfg(test)]
mod tests;
