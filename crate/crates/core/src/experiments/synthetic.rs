//! Seeded two-domain retrieval benchmark.
//!
//! Every topic owns a list of concept slots. The training domain spells
//! slot `i` of topic `t` as `a{t}w{i}`, the held-out domain as `b{t}w{i}`,
//! so the held-out domain asks the same questions in a shifted vocabulary.
//! Filler words `f{i}` are shared noise. Generic pretraining pairs mix both
//! spellings at random; fine-tuning pairs use the training spelling only.
//!
//! Documents hold a few topic words plus filler. A query draws topic words
//! from one source document: the source is graded 2, every other document
//! of its topic 1.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_corpus, load_qrels, load_queries, load_training_set, write_queries_jsonl, write_training_set, Corpus,
    Document, Format, QrelSet, Query, TrainingExample,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub docs_per_topic: usize,
    /// Evaluation queries per topic and domain.
    pub eval_queries_per_topic: usize,
    /// Fine-tuning queries per topic (training domain only).
    pub train_queries_per_topic: usize,
    pub pretrain_pairs: usize,
    pub doc_topic_words: usize,
    pub doc_filler_min: usize,
    pub doc_filler_max: usize,
    pub query_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            topics: 8,
            words_per_topic: 12,
            filler_words: 40,
            docs_per_topic: 15,
            eval_queries_per_topic: 5,
            train_queries_per_topic: 25,
            pretrain_pairs: 800,
            doc_topic_words: 5,
            doc_filler_min: 3,
            doc_filler_max: 12,
            query_words: 3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic benchmark: {m}")));
        if self.topics < 2 {
            return bad("needs at least 2 topics");
        }
        if self.doc_topic_words == 0 || self.doc_topic_words > self.words_per_topic {
            return bad("doc_topic_words must be in 1..=words_per_topic");
        }
        if self.query_words == 0 || self.query_words > self.doc_topic_words {
            return bad("query_words must be in 1..=doc_topic_words");
        }
        if self.docs_per_topic < 2 {
            return bad("needs at least 2 docs per topic");
        }
        if self.doc_filler_min > self.doc_filler_max || (self.doc_filler_max > 0 && self.filler_words == 0) {
            return bad("filler range is inconsistent");
        }
        Ok(())
    }
}

/// One evaluation collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub qrels: QrelSet,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub in_domain: Dataset,
    pub held_out: Dataset,
    pub pretrain: Vec<TrainingExample>,
    pub finetune: Vec<TrainingExample>,
}

pub const IN_DOMAIN: &str = "synth-in";
pub const HELD_OUT: &str = "synth-out";

#[derive(Clone, Copy, PartialEq)]
enum Spelling {
    Train,
    HeldOut,
    Mixed,
}

struct Gen<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn word(&mut self, topic: usize, slot: usize, spelling: Spelling) -> String {
        let held = match spelling {
            Spelling::Train => false,
            Spelling::HeldOut => true,
            Spelling::Mixed => self.rng.gen_bool(0.5),
        };
        format!("{}{topic}w{slot}", if held { 'b' } else { 'a' })
    }

    fn slots(&mut self, n: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.cfg.words_per_topic).collect();
        all.shuffle(&mut self.rng);
        all.truncate(n);
        all
    }

    fn fillers(&mut self) -> Vec<String> {
        let n = self.rng.gen_range(self.cfg.doc_filler_min..=self.cfg.doc_filler_max);
        (0..n)
            .map(|_| format!("f{}", self.rng.gen_range(0..self.cfg.filler_words)))
            .collect()
    }

    fn passage(&mut self, topic: usize, slots: &[usize], spelling: Spelling) -> String {
        let mut words: Vec<String> = slots.iter().map(|&s| self.word(topic, s, spelling)).collect();
        words.extend(self.fillers());
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    /// Documents with their topic and slot sets.
    fn documents(&mut self, prefix: &str, spelling: Spelling) -> Vec<(Document, usize, Vec<usize>)> {
        let mut out = Vec::new();
        for t in 0..self.cfg.topics {
            for j in 0..self.cfg.docs_per_topic {
                let slots = self.slots(self.cfg.doc_topic_words);
                let text = self.passage(t, &slots, spelling);
                out.push((Document::new(format!("{prefix}-t{t}-d{j}"), "", text), t, slots));
            }
        }
        out
    }

    fn query_for(&mut self, id: String, topic: usize, doc_slots: &[usize], spelling: Spelling) -> Query {
        let mut slots = doc_slots.to_vec();
        slots.shuffle(&mut self.rng);
        slots.truncate(self.cfg.query_words);
        let words: Vec<String> = slots.iter().map(|&s| self.word(topic, s, spelling)).collect();
        Query::new(id, words.join(" "))
    }

    fn eval_set(&mut self, name: &str, prefix: &str, spelling: Spelling) -> Result<Dataset> {
        let docs = self.documents(prefix, spelling);
        let mut queries = Vec::new();
        let mut qrels = QrelSet::new();
        for t in 0..self.cfg.topics {
            let topic_docs: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].1 == t).collect();
            for j in 0..self.cfg.eval_queries_per_topic {
                let src = *topic_docs.choose(&mut self.rng).expect("topic has docs");
                let qid = format!("{prefix}-t{t}-q{j}");
                queries.push(self.query_for(qid.clone(), t, &docs[src].2.clone(), spelling));
                for &i in &topic_docs {
                    qrels.insert(qid.clone(), docs[i].0.id.clone(), if i == src { 2 } else { 1 });
                }
            }
        }
        Ok(Dataset {
            name: name.to_string(),
            corpus: Corpus::from_documents(docs.into_iter().map(|d| d.0))?,
            queries,
            qrels,
        })
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    cfg.validate()?;
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let in_domain = g.eval_set(IN_DOMAIN, "in", Spelling::Train)?;
    let held_out = g.eval_set(HELD_OUT, "out", Spelling::HeldOut)?;

    // Fine-tuning: fresh queries against the in-domain corpus, one hard
    // negative from another topic.
    let docs = in_domain.corpus.documents();
    let per_topic = cfg.docs_per_topic;
    let mut finetune = Vec::new();
    for t in 0..cfg.topics {
        for j in 0..cfg.train_queries_per_topic {
            let src = t * per_topic + g.rng.gen_range(0..per_topic);
            let slots: Vec<usize> = slots_of(&docs[src].text, t);
            let q = g.query_for(format!("train-t{t}-q{j}"), t, &slots, Spelling::Train);
            let other = (t + g.rng.gen_range(1..cfg.topics)) % cfg.topics;
            let neg = docs[other * per_topic + g.rng.gen_range(0..per_topic)].clone();
            finetune.push(TrainingExample::new(q, docs[src].clone(), vec![neg]));
        }
    }

    // Generic pairs: two same-topic passages, each word spelled either way.
    let mut pretrain = Vec::with_capacity(cfg.pretrain_pairs);
    for i in 0..cfg.pretrain_pairs {
        let t = g.rng.gen_range(0..cfg.topics);
        let a = g.slots(cfg.query_words);
        let b = g.slots(cfg.doc_topic_words);
        let q = Query::new(format!("web-q{i}"), g.passage(t, &a, Spelling::Mixed));
        let d = Document::new(format!("web-d{i}"), "", g.passage(t, &b, Spelling::Mixed));
        pretrain.push(TrainingExample::new(q, d, vec![]));
    }

    Ok(SyntheticBenchmark {
        in_domain,
        held_out,
        pretrain,
        finetune,
    })
}

/// Topic slots present in a generated passage.
fn slots_of(text: &str, topic: usize) -> Vec<usize> {
    let prefix = format!("a{topic}w");
    text.split_whitespace()
        .filter_map(|w| w.strip_prefix(&prefix).and_then(|s| s.parse().ok()))
        .collect()
}

impl SyntheticBenchmark {
    /// Every text the benchmark contains, for vocabulary building.
    pub fn all_texts(&self) -> Vec<String> {
        let mut out = Vec::new();
        for ds in [&self.in_domain, &self.held_out] {
            out.extend(ds.corpus.iter().map(|d| d.full_text()));
            out.extend(ds.queries.iter().map(|q| q.text.clone()));
        }
        for ex in self.pretrain.iter().chain(&self.finetune) {
            out.push(ex.query.text.clone());
            out.push(ex.positive.full_text());
        }
        out
    }

    /// Layout: `<dataset>/{corpus.jsonl,queries.jsonl,qrels.tsv}` per eval
    /// set, plus `pretrain/` and `finetune/` with corpus, queries, pairs and
    /// negatives.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for ds in [&self.in_domain, &self.held_out] {
            let d = dir.join(&ds.name);
            mkdir(&d)?;
            ds.corpus.write_jsonl(&d.join("corpus.jsonl"))?;
            write_queries_jsonl(&ds.queries, &d.join("queries.jsonl"))?;
            ds.qrels.write_trec(&d.join("qrels.tsv"))?;
        }
        for (name, set) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            let d = dir.join(name);
            mkdir(&d)?;
            let mut corpus = Corpus::new();
            for ex in set {
                for doc in std::iter::once(&ex.positive).chain(&ex.hard_negatives) {
                    if corpus.get(&doc.id).is_none() {
                        corpus.push(doc.clone())?;
                    }
                }
            }
            corpus.write_jsonl(&d.join("corpus.jsonl"))?;
            let queries: Vec<Query> = set.iter().map(|e| e.query.clone()).collect();
            write_queries_jsonl(&queries, &d.join("queries.jsonl"))?;
            write_training_set(set, &d.join("pairs.tsv"), &d.join("negatives.tsv"))?;
        }
        Ok(())
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Reads an eval set written by [`SyntheticBenchmark::write_dir`] or laid
/// out the same way by hand.
pub fn load_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    Ok(Dataset {
        name: name.to_string(),
        corpus: load_corpus(&dir.join("corpus.jsonl"), Format::Jsonl)?,
        queries: load_queries(&dir.join("queries.jsonl"), Format::Jsonl)?,
        qrels: load_qrels(&dir.join("qrels.tsv"))?,
    })
}

/// Reads a training split directory (`corpus.jsonl`, `queries.jsonl`,
/// `pairs.tsv`, optional `negatives.tsv`).
pub fn load_training_dir(dir: &Path) -> Result<Vec<TrainingExample>> {
    let corpus = load_corpus(&dir.join("corpus.jsonl"), Format::Jsonl)?;
    let queries = load_queries(&dir.join("queries.jsonl"), Format::Jsonl)?;
    let negs = dir.join("negatives.tsv");
    let negs = negs.exists().then_some(negs);
    Ok(load_training_set(&dir.join("pairs.tsv"), negs.as_deref(), &corpus, &queries)?.examples)
}
