//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! an independent oracle and a wall-clock budget.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers (e.g.
//! `-- 1 4 7`) to run a subset.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use gtr::checkpoint::{load_checkpoint, save_checkpoint};
use gtr::corpus::{load_corpus, subsample_training_set, Corpus, Document, Format, QrelSet};
use gtr::encoder::{backward_tape, encode_batch, forward_tape, init_params, EncoderConfig, ParamSet};
use gtr::eval::{
    evaluate_run, median_topk_doc_length, mrr_at_k, ndcg_at_k, recall_at_k, Gain, Hit, MetricSpec, RankedList,
    RunResult,
};
use gtr::experiments::{generate, ExperimentSpec, Lab, HELD_OUT};
use gtr::index::{build_ivf, search_exact, search_ivf, EmbeddingStore};
use gtr::lexical::{bm25_search, build_bm25_index, DEFAULT_B, DEFAULT_K1};
use gtr::tensor::{normalize_in_place, Matrix};
use gtr::tokenizer::{words, TokenSequence};
use gtr::trainer::{bidirectional_loss, in_batch_loss, in_batch_loss_with_negatives};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    for r in v.chunks_exact_mut(d) {
        normalize_in_place(r);
    }
    v
}

// ---------------------------------------------------------------- 1: loss

/// Direct summation: mean over i of -ln(e^{cos(q_i,p_i)/τ} / Σ_c e^{cos(q_i,c)/τ})
/// where c ranges over every positive and every negative in the batch.
fn loss_oracle(q: &[Vec<f64>], p: &[Vec<f64>], n: &[Vec<f64>], tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for i in 0..q.len() {
        let num = (cos(&q[i], &p[i]) / tau).exp();
        let den: f64 = p.iter().chain(n).map(|c| (cos(&q[i], c) / tau).exp()).sum();
        total += -(num / den).ln();
    }
    total / q.len() as f64
}

fn matrix(rows: &[Vec<f64>], d: usize) -> Matrix<f64> {
    Matrix::from_vec(rows.len(), d, rows.concat()).unwrap()
}

fn criterion_loss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 6;
    let one = unit_rows(&mut rng, 2, d);
    let q1 = Matrix::from_vec(1, d, one[..d].to_vec()).unwrap();
    let p1 = Matrix::from_vec(1, d, one[d..].to_vec()).unwrap();
    let single = in_batch_loss(&q1, &p1, 0.05).map_err(|e| e.to_string())?.loss;
    ensure(single == 0.0, || format!("B=1 loss {single} != 0"))?;

    let e1: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let same = matrix(&[e1.clone(), e1.clone()], d);
    for tau in [0.01, 0.5, 3.0] {
        let l = in_batch_loss(&same, &same, tau).map_err(|e| e.to_string())?.loss;
        ensure((l - 2f64.ln()).abs() < 1e-9, || format!("uniform B=2 loss {l} at tau {tau}"))?;
    }

    let mut worst = 0f64;
    for _ in 0..100 {
        let b = rng.gen_range(1..=8);
        let m = rng.gen_range(0..=4);
        let tau = rng.gen_range(0.05..1.0);
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
            unit_rows(rng, n, d).chunks_exact(d).map(<[f64]>::to_vec).collect()
        };
        let (q, p, n) = (draw(&mut rng, b), draw(&mut rng, b), draw(&mut rng, m));
        let got = in_batch_loss_with_negatives(&matrix(&q, d), &matrix(&p, d), &matrix(&n, d), tau)
            .map_err(|e| e.to_string())?
            .loss;
        worst = worst.max((got - loss_oracle(&q, &p, &n, tau)).abs());
    }
    ensure(worst <= 1e-10, || format!("max deviation from oracle {worst:e}"))?;
    Ok(format!("B=1 -> 0, uniform B=2 -> ln 2, 100 batches max |Δ| = {worst:.1e}"))
}

// ------------------------------------------------------------ 2: gradients

fn seq(rng: &mut ChaCha8Rng, vocab: u32, max_len: usize) -> TokenSequence {
    let len = rng.gen_range(1..=max_len);
    let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(1..vocab)).collect();
    ids.resize(max_len, 0);
    TokenSequence::from_ids(ids).unwrap()
}

struct LossBatch {
    seqs: Vec<TokenSequence>,
    b: usize,
    tau: f64,
    bidirectional: bool,
}

fn split(m: &Matrix<f64>, b: usize) -> (Matrix<f64>, Matrix<f64>, Matrix<f64>) {
    let c = m.cols();
    let s = m.as_slice();
    let block = |a: usize, z: usize| Matrix::from_vec(z - a, c, s[a * c..z * c].to_vec()).unwrap();
    (block(0, b), block(b, 2 * b), block(2 * b, m.rows()))
}

fn batch_loss(params: &ParamSet<f64>, cfg: &EncoderConfig, lb: &LossBatch) -> f64 {
    let emb = encode_batch(params, cfg, &lb.seqs).unwrap();
    let (q, p, n) = split(emb.matrix(), lb.b);
    if lb.bidirectional {
        bidirectional_loss(&q, &p, &n, lb.tau).unwrap().loss
    } else {
        in_batch_loss_with_negatives(&q, &p, &n, lb.tau).unwrap().loss
    }
}

fn analytic_grads(params: &ParamSet<f64>, cfg: &EncoderConfig, lb: &LossBatch) -> ParamSet<f64> {
    let (emb, tape) = forward_tape(params, cfg, &lb.seqs).unwrap();
    let (q, p, n) = split(emb.matrix(), lb.b);
    let out = if lb.bidirectional {
        bidirectional_loss(&q, &p, &n, lb.tau).unwrap()
    } else {
        in_batch_loss_with_negatives(&q, &p, &n, lb.tau).unwrap()
    };
    let mut up = out.grad_queries.into_vec();
    up.extend(out.grad_positives.into_vec());
    up.extend(out.grad_negatives.into_vec());
    let up = Matrix::from_vec(lb.seqs.len(), cfg.bottleneck_dim, up).unwrap();
    backward_tape(params, cfg, &tape, &up).unwrap()
}

fn criterion_gradients() -> Outcome {
    let cfg = EncoderConfig {
        vocab_size: 20,
        model_dim: 8,
        ffn_dim: 16,
        num_layers: 1,
        num_heads: 2,
        bottleneck_dim: 4,
        max_len: 6,
        ..EncoderConfig::default()
    };
    let h = 1e-4;
    let mut worst = 0f64;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let params: ParamSet<f64> = init_params(&cfg, trial).map_err(|e| e.to_string())?.cast();
        let b = rng.gen_range(2..=3);
        let m = rng.gen_range(0..=2);
        let seqs = (0..2 * b + m).map(|_| seq(&mut rng, 20, cfg.max_len)).collect();
        let lb = LossBatch {
            seqs,
            b,
            tau: rng.gen_range(0.2..1.0),
            bidirectional: trial % 2 == 1,
        };
        let grads = analytic_grads(&params, &cfg, &lb);
        let mut probe = params.clone();
        for (ti, t) in params.tensors().iter().enumerate() {
            for i in 0..t.data.len() {
                let orig = t.data[i];
                probe.tensors_mut()[ti].data[i] = orig + h;
                let plus = batch_loss(&probe, &cfg, &lb);
                probe.tensors_mut()[ti].data[i] = orig - h;
                let minus = batch_loss(&probe, &cfg, &lb);
                probe.tensors_mut()[ti].data[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.tensors()[ti].data[i];
                let scale = analytic.abs().max(numeric.abs());
                if scale > 0.0 {
                    let rel = (analytic - numeric).abs() / scale.max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("20 trials, max relative error {worst:.2e}"))
}

// -------------------------------------------------------------- 3: metrics

/// trec_eval-style reference: linear-gain NDCG with the ideal list built
/// from every judged grade; recall and MRR count grades >= 1.
fn reference_metrics(ranking: &[String], judged: &HashMap<String, u32>) -> (f64, f64, f64) {
    let grade = |d: &String| judged.get(d).copied().unwrap_or(0) as f64;
    let mut dcg = 0.0;
    for (i, d) in ranking.iter().take(10).enumerate() {
        dcg += grade(d) / ((i + 2) as f64).log2();
    }
    let mut ideal: Vec<f64> = judged.values().map(|&g| g as f64).collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal.iter().take(10).enumerate().map(|(i, g)| g / ((i + 2) as f64).log2()).sum();
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };

    let relevant = judged.values().filter(|&&g| g >= 1).count();
    let hit = ranking.iter().take(100).filter(|d| grade(d) >= 1.0).count();
    let recall = if relevant > 0 { hit as f64 / relevant as f64 } else { 0.0 };

    let mrr = ranking
        .iter()
        .take(10)
        .position(|d| grade(d) >= 1.0)
        .map_or(0.0, |r| 1.0 / (r + 1) as f64);
    (ndcg, recall, mrr)
}

fn criterion_metrics() -> Outcome {
    let mut qrels = QrelSet::new();
    qrels.insert("q", "d1", 2);
    qrels.insert("q", "d2", 1);
    let hand = RankedList::new(
        "q",
        ["d2", "d1"]
            .iter()
            .map(|d| Hit {
                doc_id: d.to_string(),
                score: 0.0,
            })
            .collect(),
        10,
    );
    let v = ndcg_at_k(&hand, &qrels, 10, Gain::Linear);
    ensure(format!("{v:.5}") == "0.85972", || format!("hand NDCG {v}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let metrics = MetricSpec::parse_list("ndcg@10,recall@100,mrr@10").map_err(|e| e.to_string())?;
    let mut worst = 0f64;
    for fixture in 0..50 {
        let n_docs = rng.gen_range(20..150);
        let levels = if fixture % 2 == 0 { 3 } else { 6 };
        let mut qrels = QrelSet::new();
        let mut judged: HashMap<String, HashMap<String, u32>> = HashMap::new();
        let mut lists = Vec::new();
        let mut sums = [0f64; 3];
        let n_queries = rng.gen_range(1..8);
        for qi in 0..n_queries {
            let qid = format!("q{qi}");
            let j = judged.entry(qid.clone()).or_default();
            for d in 0..n_docs {
                if rng.gen_bool(0.3) {
                    let g = rng.gen_range(0..levels);
                    qrels.insert(qid.as_str(), format!("d{d}"), g);
                    j.insert(format!("d{d}"), g);
                }
            }
            if j.is_empty() {
                qrels.insert(qid.as_str(), "d0", 0);
                j.insert("d0".into(), 0);
            }
            let mut docs: Vec<String> = (0..n_docs + 10).map(|d| format!("d{d}")).collect();
            for i in (1..docs.len()).rev() {
                docs.swap(i, rng.gen_range(0..=i));
            }
            docs.truncate(rng.gen_range(0..=100.min(docs.len())));
            let (n, r, m) = reference_metrics(&docs, j);
            let list = RankedList::new(
                qid.as_str(),
                docs.iter()
                    .enumerate()
                    .map(|(i, d)| Hit {
                        doc_id: d.clone(),
                        score: -(i as f32),
                    })
                    .collect(),
                100,
            );
            for (got, want) in [
                (ndcg_at_k(&list, &qrels, 10, Gain::Linear), n),
                (recall_at_k(&list, &qrels, 100, 1), r),
                (mrr_at_k(&list, &qrels, 10, 1), m),
            ] {
                worst = worst.max((got - want).abs());
            }
            sums[0] += n;
            sums[1] += r;
            sums[2] += m;
            // Some queries are left out of the run and must count as empty.
            if rng.gen_bool(0.85) {
                lists.push(list);
            } else {
                let (n0, r0, m0) = reference_metrics(&[], j);
                sums[0] += n0 - n;
                sums[1] += r0 - r;
                sums[2] += m0 - m;
            }
        }
        let run = RunResult::new("fx", lists, 100);
        let ds = evaluate_run(&run, &qrels, &metrics).map_err(|e| e.to_string())?;
        for (i, (_, v)) in ds.values.iter().enumerate() {
            worst = worst.max((v - sums[i] / n_queries as f64).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation from reference {worst:e}"))?;
    Ok(format!("hand NDCG 0.85972, 50 fixtures max |Δ| = {worst:.1e}"))
}

// ------------------------------------------------------------- 4: search

fn criterion_search() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 16;
    let data: Vec<f32> = unit_rows(&mut rng, 1000, d).iter().map(|&x| x as f32).collect();
    let ids: Vec<String> = (0..1000).map(|i| format!("doc{:04}", (i * 7919) % 1000)).collect();
    let store = EmbeddingStore::from_rows(d, data, ids).map_err(|e| e.to_string())?;
    let queries: Vec<f32> = unit_rows(&mut rng, 50, d).iter().map(|&x| x as f32).collect();
    let ivf = build_ivf(&store, 20, 4, 25).map_err(|e| e.to_string())?;
    for (qi, q) in queries.chunks_exact(d).enumerate() {
        let mut all: Vec<(f32, &str)> = (0..store.len())
            .map(|i| {
                let s = store.row(i).iter().zip(q).fold(0f32, |acc, (a, b)| acc + a * b);
                (s, store.doc_ids()[i].as_str())
            })
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let want: Vec<&str> = all[..10].iter().map(|x| x.1).collect();
        let exact = search_exact(&store, q, 10).map_err(|e| e.to_string())?;
        let got: Vec<&str> = exact.iter().map(|h| h.doc_id.as_str()).collect();
        ensure(got == want, || format!("query {qi}: {got:?} != {want:?}"))?;

        let approx = search_ivf(&ivf, &store, q, 10, ivf.num_clusters()).map_err(|e| e.to_string())?;
        let bits = |hs: &[Hit]| hs.iter().map(|h| (h.doc_id.clone(), h.score.to_bits())).collect::<Vec<_>>();
        ensure(bits(&approx) == bits(&exact), || format!("query {qi}: full-probe IVF differs"))?;
    }
    Ok("1000 docs x 50 queries equal the full sort; full-probe IVF bitwise equal".into())
}

// ---------------------------------------------------------------- 5: BM25

/// Scores every document from raw term counts.
fn reference_bm25(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> Vec<(String, f32)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| words(t).collect()).collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q: Vec<String> = words(query).collect();
    let mut out = Vec::new();
    for (i, (id, _)) in docs.iter().enumerate() {
        let mut score = 0.0;
        let mut matched = false;
        for term in &q {
            let tf = toks[i].iter().filter(|w| *w == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = toks.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks[i].len() as f64 / avg));
        }
        if matched {
            out.push((id.clone(), score as f32));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

fn criterion_bm25() -> Outcome {
    let single = Corpus::from_documents([Document::new("d", "", "x")]).map_err(|e| e.to_string())?;
    let idx = build_bm25_index(&single, 0.9, 0.4).map_err(|e| e.to_string())?;
    let s = f64::from(bm25_search(&idx, "x", 1)[0].score);
    ensure((s - 0.287682).abs() <= 1e-6, || format!("single-doc score {s}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab: Vec<String> = (0..15).map(|i| format!("w{i}")).collect();
    let docs: Vec<(String, String)> = (0..20)
        .map(|i| {
            let len = rng.gen_range(1..25);
            let text: Vec<&str> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].as_str()).collect();
            (format!("doc{i:02}"), text.join(" "))
        })
        .collect();
    let corpus = Corpus::from_documents(docs.iter().map(|(id, t)| Document::new(id.as_str(), "", t.as_str())))
        .map_err(|e| e.to_string())?;
    let idx = build_bm25_index(&corpus, DEFAULT_K1, DEFAULT_B).map_err(|e| e.to_string())?;
    for qi in 0..30 {
        let len = rng.gen_range(1..5);
        let q: Vec<&str> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len() + 3).min(vocab.len() - 1)].as_str()).collect();
        let q = q.join(" ");
        let want = reference_bm25(&docs, &q, DEFAULT_K1, DEFAULT_B);
        let got = bm25_search(&idx, &q, 20);
        let got_ids: Vec<&str> = got.iter().map(|h| h.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|x| x.0.as_str()).collect();
        ensure(got_ids == want_ids, || format!("query {qi} `{q}`: {got_ids:?} != {want_ids:?}"))?;
        for (g, w) in got.iter().zip(&want) {
            ensure((g.score - w.1).abs() <= 1e-5, || format!("query {qi}: score {} vs {}", g.score, w.1))?;
        }
    }
    Ok("hand score 0.287682; 30 queries on 20 docs match the reference ranking".into())
}

// --------------------------------------------------------------- 6: trend

fn criterion_trend() -> Outcome {
    let spec = ExperimentSpec::default();
    let largest = spec.configs.len() - 1;
    let seeds = spec.seeds.clone();
    let mut lab = Lab::new(spec).map_err(|e| e.to_string())?;
    let sweep = lab.scaling_sweep().map_err(|e| e.to_string())?;
    let ablation = lab.ablation(largest).map_err(|e| e.to_string())?;
    let arms = sweep.arms();
    let (small, large) = (&arms[0], &arms[arms.len() - 1]);
    let mut size_wins = 0;
    let mut stage_wins = 0;
    let mut detail = Vec::new();
    for &s in &seeds {
        let v = |r: &gtr::experiments::ExperimentReport, arm: &str| r.value(arm, s, HELD_OUT, "ndcg@10").unwrap_or(f64::NAN);
        let (vs, vl) = (v(&sweep, small), v(&sweep, large));
        let (gtr, ft) = (v(&ablation, "GTR"), v(&ablation, "GTR-FT"));
        size_wins += usize::from(vl >= vs);
        stage_wins += usize::from(gtr >= ft);
        detail.push(format!("seed {s}: {large} {vl:.3} vs {small} {vs:.3}, GTR {gtr:.3} vs GTR-FT {ft:.3}"));
    }
    let summary = format!(
        "larger wins {size_wins}/{n}, GTR >= GTR-FT {stage_wins}/{n} ({})",
        detail.join("; "),
        n = seeds.len()
    );
    ensure(size_wins >= 2 && stage_wins >= 2, || summary.clone())?;
    Ok(summary)
}

// --------------------------------------------------------- 7: determinism

fn criterion_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files_a = common::run_pipeline(a.path(), 11);
    let files_b = common::run_pipeline(b.path(), 11);
    for (fa, fb) in files_a.iter().zip(&files_b) {
        let (x, y) = (std::fs::read(fa).map_err(|e| e.to_string())?, std::fs::read(fb).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs between runs", fa.strip_prefix(a.path()).unwrap().display()))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", files_a.len()))
}

// ---------------------------------------------------------- 8: round trips

fn criterion_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for cfg in [
        EncoderConfig::transformer(37, 2, 16, 8),
        EncoderConfig {
            arch: gtr::encoder::Arch::BagMlp,
            ..EncoderConfig::transformer(37, 1, 12, 6)
        },
    ] {
        let params = init_params(&cfg, 9).map_err(|e| e.to_string())?;
        let path = dir.path().join("m.gtrc");
        save_checkpoint(&params, &cfg, &path).map_err(|e| e.to_string())?;
        let (loaded, lcfg) = load_checkpoint(&path).map_err(|e| e.to_string())?;
        ensure(lcfg == cfg, || "checkpoint config changed".into())?;
        let bits = |p: &ParamSet<f32>| {
            p.tensors()
                .iter()
                .flat_map(|t| t.data.iter().map(|x| x.to_bits()))
                .collect::<Vec<_>>()
        };
        ensure(bits(&loaded) == bits(&params), || "checkpoint arrays changed".into())?;
        let names = |p: &ParamSet<f32>| p.tensors().iter().map(|t| (t.name.clone(), t.dims.clone())).collect::<Vec<_>>();
        ensure(names(&loaded) == names(&params), || "checkpoint layout changed".into())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f32> = unit_rows(&mut rng, 300, 12).iter().map(|&x| x as f32).collect();
    let store = EmbeddingStore::from_rows(12, data, (0..300).map(|i| format!("d{i}")).collect())
        .map_err(|e| e.to_string())?;
    let sp = dir.path().join("s.gtre");
    store.save(&sp).map_err(|e| e.to_string())?;
    let back = EmbeddingStore::load(&sp).map_err(|e| e.to_string())?;
    let bits = |s: &EmbeddingStore| s.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(back.doc_ids() == store.doc_ids() && bits(&back) == bits(&store), || "store changed".into())?;

    let docs = vec![
        Document::new("a1", "Title with \"quotes\"", "tabs\tand\nnewlines"),
        Document::new("b-2", "", "unicode: naïve café ∑ 日本語 🚀"),
        Document::new("c 3", "back\\slash", ""),
        Document::new("d4", "  padded  ", "trailing space "),
    ];
    let corpus = Corpus::from_documents(docs).map_err(|e| e.to_string())?;
    let cp = dir.path().join("c.jsonl");
    corpus.write_jsonl(&cp).map_err(|e| e.to_string())?;
    let again = load_corpus(&cp, Format::Jsonl).map_err(|e| e.to_string())?;
    ensure(again.documents() == corpus.documents(), || "corpus jsonl changed".into())?;
    Ok("checkpoints (transformer, bag), store and corpus round trip exactly".into())
}

// ------------------------------------------------------ 9: data efficiency

fn criterion_data_efficiency() -> Outcome {
    let spec = ExperimentSpec {
        seeds: vec![0],
        fractions: vec![0.1, 1.0],
        ..ExperimentSpec::default()
    };
    let bench = generate(&spec.synthetic).map_err(|e| e.to_string())?;
    let full = &bench.finetune;
    let n = full.len();
    let q: BTreeSet<&str> = full.iter().map(|e| e.query.id.as_str()).collect();
    ensure(q.len() == n, || "expected one example per query".into())?;
    let want = (0.1 * n as f64).ceil() as usize;
    for seed in 0..5 {
        let sub = subsample_training_set(full, 0.1, seed).map_err(|e| e.to_string())?;
        ensure(sub.len() == want, || format!("kept {} of {n}, expected {want}", sub.len()))?;
        for ex in &sub {
            ensure(full.contains(ex), || format!("example {} was altered", ex.query.id))?;
            ensure(!ex.hard_negatives.is_empty(), || format!("example {} lost its negatives", ex.query.id))?;
        }
    }

    let largest = spec.configs.len() - 1;
    let report = Lab::new(spec)
        .and_then(|mut lab| lab.data_efficiency(largest))
        .map_err(|e| e.to_string())?;
    ensure(report.arms() == ["frac=0.1", "frac=1"], || format!("arms {:?}", report.arms()))?;
    for (arm, size) in [("frac=0.1", want), ("frac=1", n)] {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.arm == arm).collect();
        ensure(rows.len() == 2, || format!("{arm}: {} rows", rows.len()))?;
        for r in rows {
            ensure(r.train_examples == size, || format!("{arm}: {} examples", r.train_examples))?;
            ensure(r.metrics.iter().all(|(_, v)| v.is_finite()), || format!("{arm}: non-finite metric"))?;
        }
    }
    let v = |arm: &str| report.value(arm, 0, HELD_OUT, "ndcg@10").unwrap_or(f64::NAN);
    Ok(format!(
        "keeps {want}/{n} whole examples; held-out NDCG@10 frac=0.1 {:.3}, frac=1 {:.3}",
        v("frac=0.1"),
        v("frac=1")
    ))
}

// ---------------------------------------------------------- 10: doc length

fn brute_median(mut v: Vec<usize>) -> f64 {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn criterion_doc_length() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..10 {
        let n_docs = rng.gen_range(5..60);
        let docs: Vec<Document> = (0..n_docs)
            .map(|i| {
                let len = rng.gen_range(1..40);
                Document::new(format!("d{i}"), "", vec!["w"; len].join(" "))
            })
            .collect();
        let lengths: HashMap<String, usize> = docs.iter().map(|d| (d.id.clone(), d.text.split(' ').count())).collect();
        let corpus = Corpus::from_documents(docs).map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..15);
        let mut pool = Vec::new();
        let lists: Vec<RankedList> = (0..rng.gen_range(1..8))
            .map(|qi| {
                let depth = rng.gen_range(0..20);
                let hits: Vec<Hit> = (0..depth)
                    .map(|_| Hit {
                        doc_id: format!("d{}", rng.gen_range(0..n_docs)),
                        score: 0.0,
                    })
                    .collect();
                pool.extend(hits.iter().take(k).map(|h| lengths[&h.doc_id]));
                RankedList::new(format!("q{qi}"), hits, 20)
            })
            .collect();
        let run = RunResult::new("r", lists, 20);
        let got = median_topk_doc_length(&run, &corpus, k);
        if pool.is_empty() {
            ensure(got.is_err(), || format!("trial {trial}: empty pool gave a value"))?;
            continue;
        }
        let want = brute_median(pool);
        let got = got.map_err(|e| e.to_string())?;
        ensure(got == want, || format!("trial {trial}: {got} != {want}"))?;
    }

    for (lens, want) in [(&[5usize, 7, 9][..], 7.0), (&[5, 7, 9, 11][..], 8.0), (&[4, 1][..], 2.5)] {
        let docs = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| Document::new(format!("d{i}"), "", vec!["w"; l].join(" ")));
        let corpus = Corpus::from_documents(docs).map_err(|e| e.to_string())?;
        let hits = (0..lens.len())
            .map(|i| Hit {
                doc_id: format!("d{i}"),
                score: 0.0,
            })
            .collect();
        let run = RunResult::new("r", vec![RankedList::new("q", hits, 10)], 10);
        let got = median_topk_doc_length(&run, &corpus, 10).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{lens:?}: {got} != {want}"))?;
    }
    Ok("10 random runs match brute force; odd and even medians verified".into())
}

// ------------------------------------------------------------------ main

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 10] = [
        (1, "loss correctness", Duration::from_secs(1), criterion_loss),
        (2, "gradient fidelity", Duration::from_secs(30), criterion_gradients),
        (3, "metric oracle equivalence", Duration::from_secs(5), criterion_metrics),
        (4, "retrieval exactness", Duration::from_secs(10), criterion_search),
        (5, "BM25 correctness", Duration::from_secs(5), criterion_bm25),
        (6, "trend reproduction", Duration::from_secs(600), criterion_trend),
        (7, "pipeline determinism", Duration::from_secs(120), criterion_determinism),
        (8, "round trips", Duration::from_secs(5), criterion_round_trips),
        (9, "data-efficiency plumbing", Duration::from_secs(600), criterion_data_efficiency),
        (10, "doc-length analysis", Duration::from_secs(2), criterion_doc_length),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > budget => Err(format!("{msg}; over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {id} ({name}) in {:.2}s: {msg}", took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) in {:.2}s: {msg}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
