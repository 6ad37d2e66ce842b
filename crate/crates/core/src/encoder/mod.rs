//! The shared dual-encoder tower.
//!
//! One [`ParamSet`] encodes both queries and documents. Outputs are unit
//! vectors of `bottleneck_dim`, so dot products are cosine similarities.
//! Forward and backward passes are hand-written and generic over the
//! scalar type; training runs in f32 and gradient checks in f64.

mod bag;
pub mod params;
mod transformer;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use params::{count_params, init_params, layout, per_layer_params, ParamSet, Tensor};
pub use transformer::position_code;

use crate::error::{Error, Result};
use crate::tensor::{matmul, Matrix, Scalar};
use crate::tokenizer::TokenSequence;

/// Sequences per work unit. Gradient partial sums are formed per chunk and
/// reduced in chunk order, so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Transformer,
    BagMlp,
}

impl Arch {
    pub fn code(self) -> u8 {
        match self {
            Arch::Transformer => 0,
            Arch::BagMlp => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Arch::Transformer),
            1 => Some(Arch::BagMlp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub bottleneck_dim: usize,
    pub max_len: usize,
    pub arch: Arch,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            model_dim: 64,
            ffn_dim: 256,
            num_layers: 2,
            num_heads: 4,
            bottleneck_dim: 64,
            max_len: 512,
            arch: Arch::Transformer,
        }
    }
}

impl EncoderConfig {
    pub fn transformer(vocab_size: usize, num_layers: usize, model_dim: usize, bottleneck_dim: usize) -> Self {
        EncoderConfig {
            vocab_size,
            model_dim,
            ffn_dim: 4 * model_dim,
            num_layers,
            num_heads: (model_dim / 16).max(1),
            bottleneck_dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        for (name, v) in [
            ("model_dim", self.model_dim),
            ("ffn_dim", self.ffn_dim),
            ("bottleneck_dim", self.bottleneck_dim),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.arch == Arch::Transformer && (self.num_heads == 0 || self.model_dim % self.num_heads != 0) {
            return bad(format!(
                "num_heads {} must divide model_dim {}",
                self.num_heads, self.model_dim
            ));
        }
        Ok(())
    }

    /// Four-step size ladder for desk-scale sweeps: depth and width
    /// grow, the 64-d bottleneck stays fixed.
    pub fn desk_sweep(vocab_size: usize) -> Vec<EncoderConfig> {
        [(2, 64), (4, 128), (6, 256), (8, 384)]
            .into_iter()
            .map(|(layers, dim)| EncoderConfig::transformer(vocab_size, layers, dim, 64))
            .collect()
    }
}

/// Rows are unit vectors, one per input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T = f32> {
    matrix: Matrix<T>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    /// Wraps a matrix whose rows must already have norm 1 within 1e-5.
    pub fn new(matrix: Matrix<T>) -> Result<Self> {
        for i in 0..matrix.rows() {
            let n = crate::tensor::norm(matrix.row(i)).as_f64();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!("row {i} has norm {n}, expected 1")));
            }
        }
        Ok(EmbeddingBatch { matrix })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// `normalize(pooled · W)`, returning the output and the pre-norm length.
pub(crate) fn project<T: Scalar>(w: &[T], pooled: &[T], b: usize) -> (Vec<T>, T) {
    let d = pooled.len();
    let mut z = vec![T::zero(); b];
    matmul(pooled, w, 1, d, b, &mut z);
    let n = crate::tensor::normalize_in_place(&mut z);
    if n == T::zero() {
        log::warn!("encoder produced a zero vector; using the first basis vector");
    }
    (z, n)
}

/// Backprop through normalization and projection. Accumulates the
/// projection gradient and returns the gradient wrt the pooled vector.
pub(crate) fn project_backward<T: Scalar>(
    w: &[T],
    pooled: &[T],
    out: &[T],
    z_norm: T,
    g_out: &[T],
    b: usize,
    g_w: &mut [T],
) -> Vec<T> {
    let d = pooled.len();
    let along = crate::tensor::dot(out, g_out);
    let g_z: Vec<T> = out
        .iter()
        .zip(g_out)
        .map(|(&o, &g)| (g - o * along) / z_norm)
        .collect();
    crate::tensor::matmul_at_acc(pooled, &g_z, 1, d, b, g_w);
    let mut g_pooled = vec![T::zero(); d];
    crate::tensor::matmul_bt(&g_z, w, 1, d, b, &mut g_pooled);
    g_pooled
}

enum Cache<T> {
    Transformer(transformer::Cache<T>),
    Bag(bag::Cache<T>),
}

impl<T: Scalar> Cache<T> {
    fn output(&self) -> &[T] {
        match self {
            Cache::Transformer(c) => c.output(),
            Cache::Bag(c) => c.output(),
        }
    }
}

/// Forward activations for a batch, kept for the backward pass.
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

fn check_batch(config: &EncoderConfig, batch: &[TokenSequence]) -> Result<()> {
    for seq in batch {
        if seq.max_len() > config.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence max_len {} exceeds encoder max_len {}",
                seq.max_len(),
                config.max_len
            )));
        }
        if let Some(&id) = seq.tokens().iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: config.vocab_size,
            });
        }
    }
    Ok(())
}

fn forward_one<T: Scalar>(params: &ParamSet<T>, config: &EncoderConfig, seq: &TokenSequence) -> Cache<T> {
    match config.arch {
        Arch::Transformer => Cache::Transformer(transformer::forward(params, config, seq.tokens())),
        Arch::BagMlp => Cache::Bag(bag::forward(params, config, seq.tokens())),
    }
}

/// Encodes a batch and keeps the activations needed by [`backward_tape`].
pub fn forward_tape<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    batch: &[TokenSequence],
) -> Result<(EmbeddingBatch<T>, Tape<T>)> {
    check_batch(config, batch)?;
    let caches: Vec<Cache<T>> = batch
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| chunk.iter().map(|s| forward_one(params, config, s)).collect::<Vec<_>>())
        .collect();
    let mut data = Vec::with_capacity(batch.len() * config.bottleneck_dim);
    for c in &caches {
        data.extend_from_slice(c.output());
    }
    let matrix = Matrix::from_vec(batch.len(), config.bottleneck_dim, data)?;
    Ok((EmbeddingBatch { matrix }, Tape { caches }))
}

/// Parameter gradients given the gradient of some scalar wrt each output row.
pub fn backward_tape<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    tape: &Tape<T>,
    upstream: &Matrix<T>,
) -> Result<ParamSet<T>> {
    if upstream.rows() != tape.caches.len() || upstream.cols() != config.bottleneck_dim {
        return Err(Error::Shape(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            upstream.rows(),
            upstream.cols(),
            tape.caches.len(),
            config.bottleneck_dim
        )));
    }
    let partials: Vec<ParamSet<T>> = tape
        .caches
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = params.zeros_like();
            for (j, cache) in chunk.iter().enumerate() {
                let row = upstream.row(ci * CHUNK + j);
                match cache {
                    Cache::Transformer(c) => transformer::backward(params, config, c, row, &mut g),
                    Cache::Bag(c) => bag::backward(params, config, c, row, &mut g),
                }
            }
            g
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| params.zeros_like());
    for p in iter {
        total.add_assign(&p);
    }
    Ok(total)
}

pub fn encode_batch<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    batch: &[TokenSequence],
) -> Result<EmbeddingBatch<T>> {
    check_batch(config, batch)?;
    let data: Vec<T> = batch
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            chunk
                .iter()
                .flat_map(|s| forward_one(params, config, s).output().to_vec())
                .collect::<Vec<_>>()
        })
        .collect();
    let matrix = Matrix::from_vec(batch.len(), config.bottleneck_dim, data)?;
    Ok(EmbeddingBatch { matrix })
}

pub fn encode_backward<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    batch: &[TokenSequence],
    upstream: &Matrix<T>,
) -> Result<ParamSet<T>> {
    let (_, tape) = forward_tape(params, config, batch)?;
    backward_tape(params, config, &tape, upstream)
}
