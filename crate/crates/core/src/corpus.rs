//! Documents, queries, relevance judgements and training triples.
//!
//! Interchange formats follow BEIR: a jsonl corpus with `_id`, `title`,
//! `text`; jsonl or tsv queries; TREC 4-column qrels. Training pairs and
//! hard negatives are tab-separated.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    /// Guess the format from a file extension; anything but `.tsv` is jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub word_count: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        let title = title.into();
        let text = text.into();
        let word_count = format!("{title} {text}").split_whitespace().count();
        Document {
            id: id.into(),
            title,
            text,
            word_count,
        }
    }

    /// Title and body joined by a space, which is what gets tokenized.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Graded relevance judgements. Absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    judgements: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgements
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgements
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// Judgements for one query, empty when the query is unjudged.
    pub fn for_query(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.judgements
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, g)| (d.as_str(), *g)))
    }

    /// Judged query ids in sorted order.
    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgements.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.judgements.len()
    }

    pub fn write_trec(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        for (q, docs) in &self.judgements {
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}").map_err(|e| Error::io(path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query: Query,
    pub positive: Document,
    pub hard_negatives: Vec<Document>,
}

impl TrainingExample {
    /// Builds an example, dropping negatives that repeat or equal the positive.
    pub fn new(query: Query, positive: Document, negatives: Vec<Document>) -> Self {
        let mut seen = HashSet::new();
        seen.insert(positive.id.clone());
        let hard_negatives = negatives
            .into_iter()
            .filter(|d| seen.insert(d.id.clone()))
            .collect();
        TrainingExample {
            query,
            positive,
            hard_negatives,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    index_by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut corpus = Corpus::new();
        for doc in docs {
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, doc: Document) -> Result<()> {
        if doc.id.is_empty() {
            return Err(Error::InvalidArgument("document id must be non-empty".into()));
        }
        if self.index_by_id.contains_key(&doc.id) {
            return Err(Error::InvalidArgument(format!("duplicate document id `{}`", doc.id)));
        }
        self.index_by_id.insert(doc.id.clone(), self.documents.len());
        self.documents.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index_by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index_by_id.get(id).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        for d in &self.documents {
            let line = serde_json::json!({ "_id": d.id, "title": d.title, "text": d.text });
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// One parsed record: (id, title, text).
fn parse_record(
    path: &Path,
    lineno: usize,
    line: &str,
    format: Format,
    with_title: bool,
) -> Result<(String, String, String)> {
    match format {
        Format::Jsonl => {
            let v: Value = serde_json::from_str(line)
                .map_err(|e| malformed(path, lineno, format!("invalid json: {e}")))?;
            let id = match v.get("_id") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => return Err(malformed(path, lineno, "missing `_id`")),
            };
            let text = match v.get("text") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Null) | None => return Err(malformed(path, lineno, "missing `text`")),
                Some(_) => return Err(malformed(path, lineno, "`text` is not a string")),
            };
            let title = match v.get("title") {
                Some(Value::String(s)) if with_title => s.clone(),
                _ => String::new(),
            };
            Ok((id, title, text))
        }
        Format::Tsv => {
            let fields: Vec<&str> = line.split('\t').collect();
            match (fields.as_slice(), with_title) {
                ([id, text], _) => Ok((id.to_string(), String::new(), text.to_string())),
                ([id, title, text], true) => Ok((id.to_string(), title.to_string(), text.to_string())),
                _ => Err(malformed(
                    path,
                    lineno,
                    format!("expected id<TAB>text, got {} fields", fields.len()),
                )),
            }
        }
    }
}

/// Loads a corpus preserving file order. Blank lines are skipped.
pub fn load_corpus(path: &Path, format: Format) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, title, text) = parse_record(path, lineno, line, format, true)?;
        if id.is_empty() {
            return Err(malformed(path, lineno, "empty id"));
        }
        if corpus.index_by_id.contains_key(&id) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id,
            });
        }
        corpus.push(Document::new(id, title, text))?;
    }
    Ok(corpus)
}

pub fn load_queries(path: &Path, format: Format) -> Result<Vec<Query>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, _, text) = parse_record(path, lineno, line, format, false)?;
        if id.is_empty() {
            return Err(malformed(path, lineno, "empty id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id,
            });
        }
        out.push(Query::new(id, text));
    }
    Ok(out)
}

pub fn write_queries_jsonl(queries: &[Query], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for q in queries {
        let line = serde_json::json!({ "_id": q.id, "text": q.text });
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses TREC qrels (`qid iter did grade`) or BEIR's three-column
/// `query-id corpus-id score`, whose header line is skipped.
pub fn load_qrels(path: &Path) -> Result<QrelSet> {
    let mut qrels = QrelSet::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || (lineno == 1 && fields.first() == Some(&"query-id")) {
            continue;
        }
        let (qid, did, grade) = match fields.as_slice() {
            [qid, _iter, did, grade] => (qid, did, grade),
            [qid, did, grade] => (qid, did, grade),
            _ => {
                return Err(malformed(
                    path,
                    lineno,
                    format!("expected 3 or 4 columns, got {}", fields.len()),
                ))
            }
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| malformed(path, lineno, format!("grade `{grade}` is not an integer")))?;
        if grade < 0 {
            return Err(malformed(path, lineno, format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| malformed(path, lineno, format!("grade {grade} out of range")))?;
        qrels.insert(*qid, *did, grade);
    }
    Ok(qrels)
}

/// Joined training set plus the number of negative ids that were not found
/// in the corpus and therefore skipped.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
    pub skipped_negatives: usize,
}

/// Loads `query_id<TAB>positive_doc_id` pairs and optional
/// `query_id<TAB>doc1,doc2,...` negatives, joining both against the corpus.
pub fn load_training_set(
    pairs_path: &Path,
    negatives_path: Option<&Path>,
    corpus: &Corpus,
    queries: &[Query],
) -> Result<TrainingSet> {
    let query_by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();

    let mut negatives: HashMap<String, Vec<String>> = HashMap::new();
    if let Some(np) = negatives_path {
        for (i, line) in read_lines(np)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((qid, ids)) = line.split_once('\t') else {
                return Err(malformed(np, i + 1, "expected query_id<TAB>doc_ids"));
            };
            let list = negatives.entry(qid.trim().to_string()).or_default();
            list.extend(
                ids.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from),
            );
        }
    }

    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in read_lines(pairs_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [qid, pid] = fields.as_slice() else {
            return Err(malformed(pairs_path, i + 1, "expected query_id<TAB>positive_doc_id"));
        };
        let query = query_by_id
            .get(qid)
            .ok_or_else(|| malformed(pairs_path, i + 1, format!("unknown query `{qid}`")))?;
        let positive = corpus
            .get(pid)
            .ok_or_else(|| Error::UnknownDocument(pid.to_string()))?;
        let mut negs = Vec::new();
        for nid in negatives.get(*qid).map(Vec::as_slice).unwrap_or_default() {
            match corpus.get(nid) {
                Some(d) => negs.push(d.clone()),
                None => skipped += 1,
            }
        }
        examples.push(TrainingExample::new((*query).clone(), positive.clone(), negs));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} hard-negative ids not present in the corpus");
    }
    Ok(TrainingSet {
        examples,
        skipped_negatives: skipped,
    })
}

pub fn write_training_set(examples: &[TrainingExample], pairs_path: &Path, negatives_path: &Path) -> Result<()> {
    let mut pairs = create(pairs_path)?;
    let mut negs = create(negatives_path)?;
    let mut written = HashSet::new();
    for ex in examples {
        writeln!(pairs, "{}\t{}", ex.query.id, ex.positive.id).map_err(|e| Error::io(pairs_path, e))?;
        if !ex.hard_negatives.is_empty() && written.insert(ex.query.id.clone()) {
            let ids: Vec<&str> = ex.hard_negatives.iter().map(|d| d.id.as_str()).collect();
            writeln!(negs, "{}\t{}", ex.query.id, ids.join(",")).map_err(|e| Error::io(negatives_path, e))?;
        }
    }
    pairs.flush().map_err(|e| Error::io(pairs_path, e))?;
    negs.flush().map_err(|e| Error::io(negatives_path, e))
}

/// Keeps `ceil(fraction * Q)` of the Q distinct training queries, chosen by a
/// seeded shuffle, together with every example (positives and negatives)
/// belonging to them. Output is ordered by query id.
pub fn subsample_training_set(
    examples: &[TrainingExample],
    fraction: f64,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let ids: BTreeSet<&str> = examples.iter().map(|e| e.query.id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    let keep = ((fraction * ids.len() as f64).ceil() as usize).min(ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let kept: HashSet<&str> = ids[..keep].iter().copied().collect();

    let mut out: Vec<TrainingExample> = examples
        .iter()
        .filter(|e| kept.contains(e.query.id.as_str()))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.query.id.cmp(&b.query.id));
    Ok(out)
}
