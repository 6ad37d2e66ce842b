use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Arch, EncoderConfig};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Per-layer arrays of the transformer block, in storage order.
pub(crate) const LAYER_ARRAYS: [&str; 12] = [
    "ln1.gain", "ln1.bias", "attn.q", "attn.k", "attn.v", "attn.o", "ln2.gain", "ln2.bias", "ffn.w1",
    "ffn.b1", "ffn.w2", "ffn.b2",
];

pub(crate) mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const WK: usize = 3;
    pub const WV: usize = 4;
    pub const WO: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const W1: usize = 8;
    pub const B1: usize = 9;
    pub const W2: usize = 10;
    pub const B2: usize = 11;
}

pub(crate) const EMBEDDING: usize = 0;

pub(crate) fn layer_slot(layer: usize, which: usize) -> usize {
    1 + layer * LAYER_ARRAYS.len() + which
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            name: name.into(),
            dims,
            data: vec![T::zero(); n],
        }
    }
}

/// Every learnable array of one encoder, in a fixed layout derived from the
/// config. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    tensors: Vec<Tensor<T>>,
}

/// Array names and shapes for a config, in storage order.
pub fn layout(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (v, d, f, b) = (
        config.vocab_size,
        config.model_dim,
        config.ffn_dim,
        config.bottleneck_dim,
    );
    let mut out = vec![("embedding".to_string(), vec![v, d])];
    match config.arch {
        Arch::Transformer => {
            for l in 0..config.num_layers {
                for name in LAYER_ARRAYS {
                    let dims = match name {
                        "ln1.gain" | "ln1.bias" | "ln2.gain" | "ln2.bias" | "ffn.b2" => vec![d],
                        "attn.q" | "attn.k" | "attn.v" | "attn.o" => vec![d, d],
                        "ffn.w1" => vec![d, f],
                        "ffn.b1" => vec![f],
                        "ffn.w2" => vec![f, d],
                        _ => unreachable!(),
                    };
                    out.push((format!("layer{l}.{name}"), dims));
                }
            }
        }
        Arch::BagMlp => {
            out.push(("mlp.w1".into(), vec![d, f]));
            out.push(("mlp.b1".into(), vec![f]));
            out.push(("mlp.w2".into(), vec![f, d]));
            out.push(("mlp.b2".into(), vec![d]));
        }
    }
    out.push(("projection".into(), vec![d, b]));
    out
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(config: &EncoderConfig) -> Self {
        ParamSet {
            tensors: layout(config)
                .into_iter()
                .map(|(n, d)| Tensor::zeros(n, d))
                .collect(),
        }
    }

    pub fn from_tensors(tensors: Vec<Tensor<T>>) -> Self {
        ParamSet { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.dims.clone()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn at(&self, slot: usize) -> &[T] {
        &self.tensors[slot].data
    }

    pub(crate) fn at_mut(&mut self, slot: usize) -> &mut [T] {
        &mut self.tensors[slot].data
    }

    pub(crate) fn projection(&self) -> &[T] {
        &self.tensors[self.tensors.len() - 1].data
    }

    pub(crate) fn projection_mut(&mut self) -> &mut [T] {
        let last = self.tensors.len() - 1;
        &mut self.tensors[last].data
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    dims: t.dims.clone(),
                    data: t.data.iter().map(|x| U::of(x.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + y;
            }
        }
    }

    /// L2 norm over every scalar, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first array holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|x| !x.is_finite()))
            .map(|t| t.name.as_str())
    }

    /// Checks names and shapes against the layout of `config`.
    pub fn check_layout(&self, config: &EncoderConfig) -> Result<()> {
        let expected = layout(config);
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} arrays, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, dims), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *dims != t.dims || t.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "array `{}` {:?} does not match layout `{name}` {dims:?}",
                    t.name, t.dims
                )));
            }
        }
        Ok(())
    }
}

/// Closed-form scalar count for a config.
pub fn count_params(config: &EncoderConfig) -> usize {
    let (v, d, f, b) = (
        config.vocab_size,
        config.model_dim,
        config.ffn_dim,
        config.bottleneck_dim,
    );
    let body = match config.arch {
        Arch::Transformer => config.num_layers * per_layer_params(d, f),
        Arch::BagMlp => 2 * d * f + f + d,
    };
    v * d + body + d * b
}

/// Four square attention projections, the two FFN matrices with biases and
/// two layer norms.
pub fn per_layer_params(model_dim: usize, ffn_dim: usize) -> usize {
    let d = model_dim;
    let f = ffn_dim;
    4 * d * d + 2 * d * f + f + d + 4 * d
}

/// Seeded init: truncated normal (|z| <= 2) scaled by `1/sqrt(fan_in)` for
/// matrices, fan-in 1 for the embedding table, ones for norm gains and zeros
/// for biases.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<ParamSet<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (name, dims) in layout(config) {
        let mut t = Tensor::zeros(name.clone(), dims.clone());
        if name.ends_with(".gain") {
            t.data.fill(1.0);
        } else if dims.len() == 2 {
            let fan_in = if name == "embedding" { 1 } else { dims[0] };
            let scale = 1.0 / (fan_in as f64).sqrt();
            for x in t.data.iter_mut() {
                *x = (truncated_normal(&mut rng) * scale) as f32;
            }
        }
        tensors.push(t);
    }
    Ok(ParamSet { tensors })
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}
