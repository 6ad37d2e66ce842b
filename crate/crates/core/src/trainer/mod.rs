//! Contrastive training of the shared tower.
//!
//! A stage draws shuffled batches of (query, positive, hard negatives),
//! encodes every sequence with one tape, applies the in-batch softmax loss
//! and takes an Adam step on a linearly decaying learning rate. Two stages
//! chain into generic pretraining followed by search fine-tuning.

pub mod loss;
pub mod optim;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{bidirectional_loss, cosine_similarity, in_batch_loss, in_batch_loss_with_negatives, LossOutput};
pub use optim::{linear_decay, Adam, OptimizerKind};

use crate::checkpoint;
use crate::corpus::TrainingExample;
use crate::encoder::{backward_tape, encode_batch, forward_tape, init_params, EncoderConfig, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::tokenizer::{TokenSequence, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub steps: usize,
    pub init_lr: f64,
    pub bidirectional: bool,
    pub use_hard_negatives: bool,
    /// Hard negatives taken per example, from the front of its list.
    pub num_hard_negatives: usize,
    pub seed: u64,
    pub query_max_len: usize,
    pub doc_max_len: usize,
    pub log_every: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            temperature: 0.01,
            steps: 500,
            init_lr: 1e-3,
            bidirectional: false,
            use_hard_negatives: true,
            num_hard_negatives: 1,
            seed: 0,
            query_max_len: crate::tokenizer::DEFAULT_QUERY_LEN,
            doc_max_len: crate::tokenizer::DEFAULT_DOC_LEN,
            log_every: 50,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        TrainConfig {
            steps: 2000,
            bidirectional: true,
            use_hard_negatives: false,
            ..Default::default()
        }
    }

    pub fn finetune_default() -> Self {
        TrainConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        if !(self.init_lr > 0.0) {
            return Err(Error::InvalidArgument("init_lr must be > 0".into()));
        }
        if self.query_max_len == 0 || self.doc_max_len == 0 {
            return Err(Error::InvalidArgument("sequence lengths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for StageName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageName::Pretrain => "pretrain",
            StageName::Finetune => "finetune",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitFrom {
    Fresh,
    Checkpoint(PathBuf),
    PreviousStage,
}

#[derive(Debug, Clone)]
pub struct StageSpec {
    pub name: StageName,
    pub training_set: Vec<TrainingExample>,
    pub train_config: TrainConfig,
    pub init_from: InitFrom,
    /// Checkpoint written when the stage ends.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl LossReport {
    /// `step<TAB>loss<TAB>lr<TAB>grad_norm`.
    pub fn to_tsv(&self) -> String {
        format!("{}\t{:.6}\t{:.6e}\t{:.6}", self.step, self.loss, self.lr, self.grad_norm)
    }
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub params: ParamSet<f32>,
    pub reports: Vec<LossReport>,
}

#[derive(Debug, Clone)]
pub struct MultiStageOutput {
    pub pretrained: ParamSet<f32>,
    pub finetuned: ParamSet<f32>,
    pub pretrain_reports: Vec<LossReport>,
    pub finetune_reports: Vec<LossReport>,
}

struct Tokenized {
    query: TokenSequence,
    positive: TokenSequence,
    negatives: Vec<TokenSequence>,
}

fn tokenize(
    examples: &[TrainingExample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    encoder: &EncoderConfig,
) -> Result<Vec<Tokenized>> {
    let qlen = cfg.query_max_len.min(encoder.max_len);
    let dlen = cfg.doc_max_len.min(encoder.max_len);
    let take = if cfg.use_hard_negatives { cfg.num_hard_negatives } else { 0 };
    examples
        .iter()
        .map(|ex| {
            Ok(Tokenized {
                query: vocab.encode(&ex.query.text, qlen)?,
                positive: vocab.encode(&ex.positive.full_text(), dlen)?,
                negatives: ex
                    .hard_negatives
                    .iter()
                    .take(take)
                    .map(|d| vocab.encode(&d.full_text(), dlen))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Seeded epoch shuffler; a partial tail batch triggers a reshuffle.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSampler { order, cursor: 0, rng }
    }

    fn next(&mut self, batch: usize) -> &[usize] {
        if self.cursor + batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = &self.order[self.cursor..self.cursor + batch];
        self.cursor += batch;
        out
    }
}

fn row_block(m: &Matrix<f32>, start: usize, end: usize) -> Matrix<f32> {
    let c = m.cols();
    Matrix::from_vec(end - start, c, m.as_slice()[start * c..end * c].to_vec()).expect("shape")
}

/// Runs one stage from `params`. With `steps == 0` the input is returned
/// untouched.
pub fn train_stage(
    spec: &StageSpec,
    mut params: ParamSet<f32>,
    encoder: &EncoderConfig,
    vocab: &Vocab,
) -> Result<StageOutput> {
    let cfg = &spec.train_config;
    cfg.validate()?;
    params.check_layout(encoder)?;
    if vocab.size() != encoder.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocabulary has {} ids but the encoder expects {}",
            vocab.size(),
            encoder.vocab_size
        )));
    }
    let mut reports = Vec::new();
    if cfg.steps > 0 {
        if spec.training_set.is_empty() {
            return Err(Error::InvalidArgument(format!("{} stage has no training examples", spec.name)));
        }
        if cfg.batch_size > spec.training_set.len() {
            return Err(Error::InvalidArgument(format!(
                "batch_size {} exceeds the {} training examples; lower batch_size",
                cfg.batch_size,
                spec.training_set.len()
            )));
        }
        let data = tokenize(&spec.training_set, vocab, cfg, encoder)?;
        let mut sampler = BatchSampler::new(data.len(), cfg.seed);
        let mut adam = Adam::new(&params);

        for step in 0..cfg.steps {
            let batch = sampler.next(cfg.batch_size);
            let b = batch.len();
            let mut seqs: Vec<TokenSequence> = Vec::with_capacity(3 * b);
            seqs.extend(batch.iter().map(|&i| data[i].query.clone()));
            seqs.extend(batch.iter().map(|&i| data[i].positive.clone()));
            for &i in batch {
                seqs.extend(data[i].negatives.iter().cloned());
            }

            let (emb, tape) = forward_tape(&params, encoder, &seqs)?;
            let m = emb.matrix();
            let q = row_block(m, 0, b);
            let p = row_block(m, b, 2 * b);
            let n = row_block(m, 2 * b, seqs.len());
            let out = if cfg.bidirectional {
                bidirectional_loss(&q, &p, &n, cfg.temperature)?
            } else {
                in_batch_loss_with_negatives(&q, &p, &n, cfg.temperature)?
            };
            if !out.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {step}")));
            }
            let mut upstream = out.grad_queries.into_vec();
            upstream.extend(out.grad_positives.into_vec());
            upstream.extend(out.grad_negatives.into_vec());
            let upstream = Matrix::from_vec(seqs.len(), encoder.bottleneck_dim, upstream)?;
            let grads = backward_tape(&params, encoder, &tape, &upstream)?;
            let grad_norm = grads.global_norm();
            let lr = linear_decay(cfg.init_lr, step, cfg.steps);
            adam.step(&mut params, &grads, step, lr)?;

            if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
                let r = LossReport {
                    step,
                    loss: out.loss,
                    lr,
                    grad_norm,
                };
                log::info!("{}\t{}", spec.name, r.to_tsv());
                reports.push(r);
            }
        }
    }
    if let Some(path) = &spec.output {
        checkpoint::save_checkpoint(&params, encoder, path)?;
    }
    Ok(StageOutput { params, reports })
}

fn initial_params(spec: &StageSpec, encoder: &EncoderConfig) -> Result<ParamSet<f32>> {
    match &spec.init_from {
        InitFrom::Fresh => init_params(encoder, spec.train_config.seed),
        InitFrom::Checkpoint(path) => {
            let (params, cfg) = checkpoint::load_checkpoint(path)?;
            if cfg != *encoder {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint {} was saved with a different encoder config",
                    path.display()
                )));
            }
            Ok(params)
        }
        InitFrom::PreviousStage => Err(Error::InvalidArgument(format!(
            "{} stage cannot start from a previous stage here",
            spec.name
        ))),
    }
}

/// Pretraining followed by fine-tuning from its output. Both parameter
/// sets are returned so either stage can be evaluated on its own.
pub fn run_multi_stage(
    pretrain: &StageSpec,
    finetune: &StageSpec,
    encoder: &EncoderConfig,
    vocab: &Vocab,
) -> Result<MultiStageOutput> {
    if finetune.init_from != InitFrom::PreviousStage {
        return Err(Error::InvalidArgument(
            "the fine-tune stage must start from the pretrain output".into(),
        ));
    }
    let start = initial_params(pretrain, encoder)?;
    let pt = train_stage(pretrain, start, encoder, vocab)?;
    let ft = train_stage(finetune, pt.params.clone(), encoder, vocab)?;
    Ok(MultiStageOutput {
        pretrained: pt.params,
        finetuned: ft.params,
        pretrain_reports: pt.reports,
        finetune_reports: ft.reports,
    })
}

/// Loss of `params` on a whole example set treated as one batch, under the
/// loss flags of `cfg`. No parameters change.
pub fn dataset_loss(
    params: &ParamSet<f32>,
    encoder: &EncoderConfig,
    vocab: &Vocab,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let data = tokenize(examples, vocab, cfg, encoder)?;
    let b = data.len();
    let mut seqs: Vec<TokenSequence> = data.iter().map(|t| t.query.clone()).collect();
    seqs.extend(data.iter().map(|t| t.positive.clone()));
    for t in &data {
        seqs.extend(t.negatives.iter().cloned());
    }
    let emb = encode_batch(params, encoder, &seqs)?;
    let m = emb.matrix();
    let (q, p, n) = (row_block(m, 0, b), row_block(m, b, 2 * b), row_block(m, 2 * b, seqs.len()));
    let out = if cfg.bidirectional {
        bidirectional_loss(&q, &p, &n, cfg.temperature)?
    } else {
        in_batch_loss_with_negatives(&q, &p, &n, cfg.temperature)?
    };
    Ok(out.loss)
}

/// Single stage from its own `init_from`.
pub fn run_single_stage(spec: &StageSpec, encoder: &EncoderConfig, vocab: &Vocab) -> Result<StageOutput> {
    let start = initial_params(spec, encoder)?;
    train_stage(spec, start, encoder, vocab)
}
