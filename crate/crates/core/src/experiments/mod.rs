//! Desk-scale experiment runners on the synthetic two-domain benchmark:
//! model-size sweep at a fixed bottleneck, stage ablation, data
//! efficiency, BM25 comparison and single-input encode latency.
//!
//! A [`Lab`] memoizes trained stages by (config, seed, stage settings), so
//! experiments that share a training run pay for it once.

pub mod synthetic;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use synthetic::{generate, Dataset, SyntheticBenchmark, SyntheticConfig, HELD_OUT, IN_DOMAIN};

use crate::corpus::{subsample_training_set, TrainingExample};
use crate::encoder::{count_params, encode_batch, init_params, EncoderConfig, ParamSet};
use crate::error::{Error, Result};
use crate::eval::{aggregate_reports, evaluate_run, DatasetMetrics, MetricSpec, MetricsReport, RunResult};
use crate::index::{encode_corpus, search_batch, RankedList};
use crate::lexical::{bm25_search, build_bm25_index, DEFAULT_B, DEFAULT_K1};
use crate::tokenizer::{TokenSequence, Vocab};
use crate::trainer::{train_stage, InitFrom, StageName, StageSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub synthetic: SyntheticConfig,
    /// Encoder configs in ascending size; `vocab_size` is filled in from
    /// the vocabulary built per seed.
    pub configs: Vec<EncoderConfig>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    pub metrics: Vec<String>,
    pub max_vocab: usize,
    pub oov_buckets: u32,
    /// Depth retrieved per query; must cover every metric.
    pub depth: usize,
    pub encode_batch: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let small = EncoderConfig {
            ffn_dim: 32,
            num_heads: 2,
            max_len: 32,
            ..EncoderConfig::transformer(0, 1, 16, 32)
        };
        let large = EncoderConfig {
            max_len: 32,
            ..EncoderConfig::transformer(0, 2, 48, 32)
        };
        ExperimentSpec {
            synthetic: SyntheticConfig::default(),
            configs: vec![small, large],
            pretrain: TrainConfig {
                batch_size: 32,
                temperature: 0.05,
                steps: 300,
                init_lr: 3e-3,
                bidirectional: true,
                use_hard_negatives: false,
                query_max_len: 32,
                doc_max_len: 32,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                batch_size: 32,
                temperature: 0.05,
                steps: 150,
                init_lr: 1e-3,
                query_max_len: 32,
                doc_max_len: 32,
                ..TrainConfig::default()
            },
            seeds: vec![0, 1, 2],
            fractions: vec![0.1, 1.0],
            metrics: vec!["ndcg@10".into(), "recall@100".into()],
            max_vocab: 100_000,
            oov_buckets: 16,
            depth: 100,
            encode_batch: 64,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn metric_specs(&self) -> Result<Vec<MetricSpec>> {
        let specs: Vec<MetricSpec> = self.metrics.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        if let Some(m) = specs.iter().find(|m| m.k > self.depth) {
            return Err(Error::Config(format!("metric {m} is deeper than depth {}", self.depth)));
        }
        Ok(specs)
    }

    fn check(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.metric_specs()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.configs.is_empty() {
            return Err(Error::Config("no encoder configs".into()));
        }
        let b = self.configs[0].bottleneck_dim;
        if let Some(c) = self.configs.iter().find(|c| c.bottleneck_dim != b) {
            return Err(Error::Config(format!(
                "all configs must share bottleneck_dim {b}, found {}",
                c.bottleneck_dim
            )));
        }
        Ok(())
    }
}

/// Short label such as `l2-d48`, or `bag-d16` for the bag-of-words tower.
pub fn config_label(c: &EncoderConfig) -> String {
    match c.arch {
        crate::encoder::Arch::Transformer => format!("l{}-d{}", c.num_layers, c.model_dim),
        crate::encoder::Arch::BagMlp => format!("bag-d{}", c.model_dim),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub arm: String,
    pub seed: u64,
    pub dataset: String,
    pub params: usize,
    pub train_examples: usize,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub metric_names: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// `(arm, seed, seconds)` training wall-clock, kept apart from the
    /// metrics so metric files are reproducible byte for byte.
    pub timings: Vec<(String, u64, f64)>,
}

impl ExperimentReport {
    fn new(name: &str, metric_names: Vec<String>) -> Self {
        ExperimentReport {
            name: name.to_string(),
            metric_names,
            rows: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn value(&self, arm: &str, seed: u64, dataset: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.seed == seed && r.dataset == dataset)
            .and_then(|r| r.metrics.iter().find(|(m, _)| m == metric))
            .map(|&(_, v)| v)
    }

    pub fn arms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.arm) {
                out.push(r.arm.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,arm,seed,dataset,params,train_examples");
        for m in &self.metric_names {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{},{},{}",
                self.name, r.arm, r.seed, r.dataset, r.params, r.train_examples
            )
            .unwrap();
            for (_, v) in &r.metrics {
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("arm,seed,train_seconds\n");
        for (arm, seed, s) in &self.timings {
            writeln!(out, "{arm},{seed},{s:.3}").unwrap();
        }
        out
    }

    /// Per (arm, seed) tables with an average and an average that leaves
    /// out the in-domain set.
    pub fn tables(&self) -> Result<Vec<(String, MetricsReport)>> {
        let mut keys: Vec<(String, u64)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.arm.clone(), r.seed)) {
                keys.push((r.arm.clone(), r.seed));
            }
        }
        keys.into_iter()
            .map(|(arm, seed)| {
                let per: Vec<DatasetMetrics> = self
                    .rows
                    .iter()
                    .filter(|r| r.arm == arm && r.seed == seed)
                    .map(|r| DatasetMetrics {
                        dataset: r.dataset.clone(),
                        num_queries: 0,
                        values: r.metrics.clone(),
                    })
                    .collect();
                let exclude = (per.len() > 1 && per.iter().any(|d| d.dataset == IN_DOMAIN)).then_some(IN_DOMAIN);
                Ok((format!("{arm} seed={seed}"), aggregate_reports(per, exclude)?))
            })
            .collect()
    }

    /// gnuplot script plotting the first metric against arm order, one
    /// line per dataset, from `<name>.csv`.
    pub fn gnuplot_script(&self) -> String {
        let metric_col = 7;
        let mut s = String::new();
        writeln!(s, "set datafile separator ','").unwrap();
        writeln!(s, "set terminal pngcairo size 800,500").unwrap();
        writeln!(s, "set output '{}.png'", self.name).unwrap();
        writeln!(s, "set key outside").unwrap();
        writeln!(s, "set ylabel '{}'", self.metric_names.first().map_or("", String::as_str)).unwrap();
        writeln!(s, "set style data linespoints").unwrap();
        let arms = self.arms();
        let tics: Vec<String> = arms.iter().enumerate().map(|(i, a)| format!("'{a}' {i}")).collect();
        writeln!(s, "set xtics ({})", tics.join(", ")).unwrap();
        let mut datasets: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
        }
        let arm_index: Vec<String> = arms
            .iter()
            .enumerate()
            .map(|(i, a)| format!("strcol(2) eq '{a}' ? {i} : "))
            .collect();
        let plots: Vec<String> = datasets
            .iter()
            .map(|d| {
                format!(
                    "'{}.csv' every ::1 using ({}NaN):(strcol(4) eq '{d}' ? ${metric_col} : NaN) title '{d}'",
                    self.name,
                    arm_index.concat()
                )
            })
            .collect();
        writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
        s
    }

    /// Writes `<name>.csv`, `<name>_timings.csv`, `<name>.gp` and
    /// `<name>_tables.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tables = String::new();
        for (title, rep) in self.tables()? {
            writeln!(tables, "# {title}").unwrap();
            tables.push_str(&rep.to_table());
        }
        for (file, body) in [
            (format!("{}.csv", self.name), self.to_csv()),
            (format!("{}_timings.csv", self.name), self.timings_csv()),
            (format!("{}.gp", self.name), self.gnuplot_script()),
            (format!("{}_tables.tsv", self.name), tables),
        ] {
            let p = dir.join(file);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

struct Prepared {
    bench: SyntheticBenchmark,
    vocab: Vocab,
}

/// Memoizing experiment driver.
pub struct Lab {
    spec: ExperimentSpec,
    metrics: Vec<MetricSpec>,
    prepared: HashMap<u64, Prepared>,
    stages: HashMap<String, (ParamSet<f32>, f64)>,
}

impl Lab {
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        spec.check()?;
        let metrics = spec.metric_specs()?;
        Ok(Lab {
            spec,
            metrics,
            prepared: HashMap::new(),
            stages: HashMap::new(),
        })
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    fn metric_names(&self) -> Vec<String> {
        self.metrics.iter().map(ToString::to_string).collect()
    }

    fn prepare(&mut self, seed: u64) -> Result<&Prepared> {
        if !self.prepared.contains_key(&seed) {
            let bench = generate(&SyntheticConfig {
                seed,
                ..self.spec.synthetic.clone()
            })?;
            let vocab = Vocab::build_from_texts(bench.all_texts(), self.spec.max_vocab, self.spec.oov_buckets)?;
            log::info!(
                "seed {seed}: {} pretrain pairs, {} fine-tune pairs, vocabulary {}",
                bench.pretrain.len(),
                bench.finetune.len(),
                vocab.size()
            );
            self.prepared.insert(seed, Prepared { bench, vocab });
        }
        Ok(&self.prepared[&seed])
    }

    /// Benchmark and vocabulary for one seed.
    pub fn benchmark(&mut self, seed: u64) -> Result<(&SyntheticBenchmark, &Vocab)> {
        let p = self.prepare(seed)?;
        Ok((&p.bench, &p.vocab))
    }

    fn config_for(&mut self, idx: usize, seed: u64) -> Result<EncoderConfig> {
        let vocab_size = self.prepare(seed)?.vocab.size();
        let c = self
            .spec
            .configs
            .get(idx)
            .ok_or_else(|| Error::Config(format!("no encoder config #{idx}")))?;
        Ok(EncoderConfig { vocab_size, ..c.clone() })
    }

    fn stage_cfg(base: &TrainConfig, seed: u64, steps: Option<usize>, n: usize) -> TrainConfig {
        let mut c = TrainConfig {
            seed,
            steps: steps.unwrap_or(base.steps),
            ..base.clone()
        };
        if c.batch_size > n && n > 0 {
            log::warn!("batch_size {} exceeds {n} examples; using {n}", c.batch_size);
            c.batch_size = n;
        }
        c
    }

    /// Trains (or recalls) pretraining then fine-tuning for one cell and
    /// returns (pretrained, finetuned, fine-tune examples, seconds).
    fn train(
        &mut self,
        config: &EncoderConfig,
        seed: u64,
        pretrain_steps: Option<usize>,
        finetune_steps: Option<usize>,
        fraction: f64,
    ) -> Result<(ParamSet<f32>, ParamSet<f32>, usize, f64)> {
        self.prepare(seed)?;
        let prep = &self.prepared[&seed];
        let pt_cfg = Self::stage_cfg(&self.spec.pretrain, seed, pretrain_steps, prep.bench.pretrain.len());
        let pt_key = format!("{config:?}|{seed}|{pt_cfg:?}");
        let started = Instant::now();
        if !self.stages.contains_key(&pt_key) {
            let spec = StageSpec {
                name: StageName::Pretrain,
                training_set: prep.bench.pretrain.clone(),
                train_config: pt_cfg.clone(),
                init_from: InitFrom::Fresh,
                output: None,
            };
            let t = Instant::now();
            let out = train_stage(&spec, init_params(config, seed)?, config, &prep.vocab)?;
            self.stages.insert(pt_key.clone(), (out.params, t.elapsed().as_secs_f64()));
        }

        let ft_examples: Vec<TrainingExample> = if fraction < 1.0 {
            subsample_training_set(&prep.bench.finetune, fraction, seed)?
        } else {
            prep.bench.finetune.clone()
        };
        let ft_cfg = Self::stage_cfg(&self.spec.finetune, seed, finetune_steps, ft_examples.len());
        let ft_key = format!("{pt_key}|{ft_cfg:?}|{fraction}");
        if !self.stages.contains_key(&ft_key) {
            let spec = StageSpec {
                name: StageName::Finetune,
                training_set: ft_examples.clone(),
                train_config: ft_cfg,
                init_from: InitFrom::PreviousStage,
                output: None,
            };
            let t = Instant::now();
            let start = self.stages[&pt_key].0.clone();
            let out = train_stage(&spec, start, config, &prep.vocab)?;
            self.stages.insert(ft_key.clone(), (out.params, t.elapsed().as_secs_f64()));
        }
        log::debug!("cell ready in {:.1}s", started.elapsed().as_secs_f64());
        let (pt, pt_s) = &self.stages[&pt_key];
        let (ft, ft_s) = &self.stages[&ft_key];
        Ok((pt.clone(), ft.clone(), ft_examples.len(), pt_s + ft_s))
    }

    fn evaluate(&self, params: &ParamSet<f32>, config: &EncoderConfig, seed: u64) -> Result<Vec<DatasetMetrics>> {
        let prep = &self.prepared[&seed];
        let qlen = self.spec.finetune.query_max_len.min(config.max_len);
        let dlen = self.spec.finetune.doc_max_len.min(config.max_len);
        [&prep.bench.in_domain, &prep.bench.held_out]
            .into_iter()
            .map(|ds| {
                let run = dense_run(params, config, &prep.vocab, ds, qlen, dlen, self.spec.depth, self.spec.encode_batch)?;
                evaluate_run(&run, &ds.qrels, &self.metrics)
            })
            .collect()
    }

    fn push_rows(
        report: &mut ExperimentReport,
        arm: &str,
        seed: u64,
        params: usize,
        train_examples: usize,
        per: Vec<DatasetMetrics>,
    ) {
        for d in per {
            report.rows.push(ReportRow {
                arm: arm.to_string(),
                seed,
                dataset: d.dataset,
                params,
                train_examples,
                metrics: d.values,
            });
        }
    }

    /// Each config trained through both stages with identical data, steps
    /// and seed, then evaluated in-domain and held-out.
    pub fn scaling_sweep(&mut self) -> Result<ExperimentReport> {
        if self.spec.configs.len() < 2 {
            return Err(Error::Config("a sweep needs at least 2 configs".into()));
        }
        let mut report = ExperimentReport::new("sweep", self.metric_names());
        for seed in self.spec.seeds.clone() {
            for idx in 0..self.spec.configs.len() {
                let cfg = self.config_for(idx, seed)?;
                let (_, ft, n, secs) = self.train(&cfg, seed, None, None, 1.0)?;
                let per = self.evaluate(&ft, &cfg, seed)?;
                let label = config_label(&cfg);
                Self::push_rows(&mut report, &label, seed, count_params(&cfg), n, per);
                report.timings.push((label, seed, secs));
            }
        }
        Ok(report)
    }

    /// GTR (both stages), GTR-FT (no pretraining) and GTR-PT (no
    /// fine-tuning) for config `idx`. Arms differ only in step counts.
    pub fn ablation(&mut self, idx: usize) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::new("ablation", self.metric_names());
        for seed in self.spec.seeds.clone() {
            let cfg = self.config_for(idx, seed)?;
            let params = count_params(&cfg);
            let (pt, gtr, n, secs) = self.train(&cfg, seed, None, None, 1.0)?;
            let (_, ft_only, _, ft_secs) = self.train(&cfg, seed, Some(0), None, 1.0)?;
            for (arm, p, examples, s) in [
                ("GTR", &gtr, n, secs),
                ("GTR-FT", &ft_only, n, ft_secs),
                ("GTR-PT", &pt, 0, secs),
            ] {
                let per = self.evaluate(p, &cfg, seed)?;
                Self::push_rows(&mut report, arm, seed, params, examples, per);
                report.timings.push((arm.to_string(), seed, s));
            }
        }
        Ok(report)
    }

    /// Fine-tuning on seeded subsamples of the fine-tune set, each from
    /// the same pretrained checkpoint of config `idx`.
    pub fn data_efficiency(&mut self, idx: usize) -> Result<ExperimentReport> {
        let fractions = self.spec.fractions.clone();
        if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        let mut report = ExperimentReport::new("data_efficiency", self.metric_names());
        for seed in self.spec.seeds.clone() {
            let cfg = self.config_for(idx, seed)?;
            for &f in &fractions {
                let (_, ft, n, secs) = self.train(&cfg, seed, None, None, f)?;
                log::info!("fraction {f}: {n} fine-tune examples");
                let per = self.evaluate(&ft, &cfg, seed)?;
                let arm = format!("frac={f}");
                Self::push_rows(&mut report, &arm, seed, count_params(&cfg), n, per);
                report.timings.push((arm, seed, secs));
            }
        }
        Ok(report)
    }

    /// BM25 next to every dense config, per dataset.
    pub fn bm25_comparison(&mut self) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::new("bm25", self.metric_names());
        for seed in self.spec.seeds.clone() {
            self.prepare(seed)?;
            let prep = &self.prepared[&seed];
            let per = [&prep.bench.in_domain, &prep.bench.held_out]
                .into_iter()
                .map(|ds| evaluate_run(&bm25_run(ds, self.spec.depth)?, &ds.qrels, &self.metrics))
                .collect::<Result<Vec<_>>>()?;
            Self::push_rows(&mut report, "BM25", seed, 0, 0, per);
            for idx in 0..self.spec.configs.len() {
                let cfg = self.config_for(idx, seed)?;
                let (_, ft, n, secs) = self.train(&cfg, seed, None, None, 1.0)?;
                let per = self.evaluate(&ft, &cfg, seed)?;
                let label = config_label(&cfg);
                Self::push_rows(&mut report, &label, seed, count_params(&cfg), n, per);
                report.timings.push((label, seed, secs));
            }
        }
        Ok(report)
    }
}

/// Encodes a dataset's corpus and queries and retrieves `depth` hits per
/// query by exact search.
#[allow(clippy::too_many_arguments)]
pub fn dense_run(
    params: &ParamSet<f32>,
    config: &EncoderConfig,
    vocab: &Vocab,
    ds: &Dataset,
    query_len: usize,
    doc_len: usize,
    depth: usize,
    batch: usize,
) -> Result<RunResult> {
    let store = encode_corpus(params, config, vocab, &ds.corpus, doc_len, batch)?;
    let seqs: Vec<TokenSequence> = ds
        .queries
        .iter()
        .map(|q| vocab.encode(&q.text, query_len.min(config.max_len)))
        .collect::<Result<_>>()?;
    let emb = encode_batch(params, config, &seqs)?;
    let queries: Vec<(String, Vec<f32>)> = ds
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.clone(), emb.matrix().row(i).to_vec()))
        .collect();
    Ok(RunResult::new(ds.name.clone(), search_batch(&store, &queries, depth)?, depth))
}

pub fn bm25_run(ds: &Dataset, depth: usize) -> Result<RunResult> {
    let index = build_bm25_index(&ds.corpus, DEFAULT_K1, DEFAULT_B)?;
    let lists = ds
        .queries
        .iter()
        .map(|q| RankedList::new(q.id.clone(), bm25_search(&index, &q.text, depth), depth))
        .collect();
    Ok(RunResult::new(ds.name.clone(), lists, depth))
}

pub fn run_scaling_sweep(spec: ExperimentSpec) -> Result<ExperimentReport> {
    Lab::new(spec)?.scaling_sweep()
}

/// Ablation on the largest config.
pub fn run_ablation(spec: ExperimentSpec) -> Result<ExperimentReport> {
    let last = spec.configs.len().saturating_sub(1);
    Lab::new(spec)?.ablation(last)
}

/// Data-efficiency arms on the largest config.
pub fn run_data_efficiency(spec: ExperimentSpec) -> Result<ExperimentReport> {
    let last = spec.configs.len().saturating_sub(1);
    Lab::new(spec)?.data_efficiency(last)
}

pub fn run_bm25_comparison(spec: ExperimentSpec) -> Result<ExperimentReport> {
    Lab::new(spec)?.bm25_comparison()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub label: String,
    pub params: usize,
    /// Per-trial wall-clock in milliseconds, warmup excluded.
    pub timings_ms: Vec<f64>,
    pub median_ms: f64,
}

/// Median wall-clock of encoding `batch_size` random sequences of
/// `input_len` tokens, after `warmup` untimed runs.
pub fn bench_encode_latency(
    configs: &[EncoderConfig],
    batch_size: usize,
    input_len: usize,
    trials: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<LatencyRow>> {
    if trials < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 trials, got {trials}")));
    }
    let mut rows = Vec::new();
    for cfg in configs {
        let cfg = EncoderConfig {
            max_len: cfg.max_len.max(input_len),
            ..cfg.clone()
        };
        let params = init_params(&cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<TokenSequence> = (0..batch_size.max(1))
            .map(|_| TokenSequence::from_ids((0..input_len).map(|_| rng.gen_range(1..cfg.vocab_size as u32)).collect()))
            .collect::<Result<_>>()?;
        for _ in 0..warmup {
            encode_batch(&params, &cfg, &batch)?;
        }
        let mut timings_ms = Vec::with_capacity(trials);
        for _ in 0..trials {
            let t = Instant::now();
            std::hint::black_box(encode_batch(&params, &cfg, &batch)?);
            timings_ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mut sorted = timings_ms.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        rows.push(LatencyRow {
            label: config_label(&cfg),
            params: count_params(&cfg),
            timings_ms,
            median_ms,
        });
    }
    Ok(rows)
}

pub fn latency_table(rows: &[LatencyRow]) -> String {
    let mut out = String::from("config\tparams\tmedian_ms\ttrials_ms\n");
    for r in rows {
        let trials: Vec<String> = r.timings_ms.iter().map(|t| format!("{t:.3}")).collect();
        writeln!(out, "{}\t{}\t{:.3}\t{}", r.label, r.params, r.median_ms, trials.join(",")).unwrap();
    }
    out
}
