//! Bag-of-embeddings tower: masked mean of token embeddings, a two-layer
//! GELU MLP, then the shared bottleneck projection. Same contract as the
//! transformer, at a fraction of the cost.

use super::params::{ParamSet, EMBEDDING};
use super::{gelu, gelu_grad, EncoderConfig};
use crate::tensor::{matmul, matmul_at_acc, matmul_bt, Scalar};

const W1: usize = 1;
const B1: usize = 2;
const W2: usize = 3;
const B2: usize = 4;

pub(crate) struct Cache<T> {
    tokens: Vec<u32>,
    mean: Vec<T>,
    u: Vec<T>,
    a: Vec<T>,
    m: Vec<T>,
    z_norm: T,
    out: Vec<T>,
}

impl<T: Scalar> Cache<T> {
    pub fn output(&self) -> &[T] {
        &self.out
    }
}

pub(crate) fn forward<T: Scalar>(params: &ParamSet<T>, cfg: &EncoderConfig, tokens: &[u32]) -> Cache<T> {
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    let emb = params.at(EMBEDDING);
    let mut mean = vec![T::zero(); d];
    for &tok in tokens {
        for (m, &e) in mean.iter_mut().zip(&emb[tok as usize * d..(tok as usize + 1) * d]) {
            *m = *m + e;
        }
    }
    let denom = T::of(tokens.len().max(1) as f64);
    for m in mean.iter_mut() {
        *m = *m / denom;
    }
    let mut u = vec![T::zero(); f];
    matmul(&mean, params.at(W1), 1, d, f, &mut u);
    for (x, &b) in u.iter_mut().zip(params.at(B1)) {
        *x = *x + b;
    }
    let a: Vec<T> = u.iter().map(|&x| gelu(x)).collect();
    let mut m = vec![T::zero(); d];
    matmul(&a, params.at(W2), 1, f, d, &mut m);
    for (x, &b) in m.iter_mut().zip(params.at(B2)) {
        *x = *x + b;
    }
    let (out, z_norm) = if tokens.is_empty() {
        // empty input pools to zero regardless of biases
        super::project(params.projection(), &vec![T::zero(); d], cfg.bottleneck_dim)
    } else {
        super::project(params.projection(), &m, cfg.bottleneck_dim)
    };
    Cache {
        tokens: tokens.to_vec(),
        mean,
        u,
        a,
        m,
        z_norm,
        out,
    }
}

pub(crate) fn backward<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &EncoderConfig,
    cache: &Cache<T>,
    g_out: &[T],
    grads: &mut ParamSet<T>,
) {
    if cache.tokens.is_empty() || cache.z_norm == T::zero() {
        return;
    }
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    let g_m = super::project_backward(
        params.projection(),
        &cache.m,
        &cache.out,
        cache.z_norm,
        g_out,
        cfg.bottleneck_dim,
        grads.projection_mut(),
    );
    for (g, &v) in grads.at_mut(B2).iter_mut().zip(&g_m) {
        *g = *g + v;
    }
    matmul_at_acc(&cache.a, &g_m, 1, f, d, grads.at_mut(W2));
    let mut g_u = vec![T::zero(); f];
    matmul_bt(&g_m, params.at(W2), 1, f, d, &mut g_u);
    for (g, &u) in g_u.iter_mut().zip(&cache.u) {
        *g = *g * gelu_grad(u);
    }
    for (g, &v) in grads.at_mut(B1).iter_mut().zip(&g_u) {
        *g = *g + v;
    }
    matmul_at_acc(&cache.mean, &g_u, 1, d, f, grads.at_mut(W1));
    let mut g_mean = vec![T::zero(); d];
    matmul_bt(&g_u, params.at(W1), 1, d, f, &mut g_mean);
    let inv_n = T::one() / T::of(cache.tokens.len() as f64);
    let gemb = grads.at_mut(EMBEDDING);
    for &tok in &cache.tokens {
        for (g, &v) in gemb[tok as usize * d..(tok as usize + 1) * d].iter_mut().zip(&g_mean) {
            *g = *g + v * inv_n;
        }
    }
}
