//! Pre-norm transformer tower: token + sinusoidal position embeddings,
//! `num_layers` blocks of multi-head self-attention and a GELU FFN, then
//! mean pooling, bottleneck projection and L2 normalization.
//!
//! Only the non-pad prefix of a sequence is ever processed, so padding
//! cannot influence the output.

use super::params::{layer_slot, slot, ParamSet, EMBEDDING};
use super::{gelu, gelu_grad, EncoderConfig};
use crate::tensor::{matmul, matmul_at_acc, matmul_bt, Scalar};

const LN_EPS: f64 = 1e-5;

pub(crate) struct LayerCache<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: Vec<T>,
    o: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    h2: Vec<T>,
    u: Vec<T>,
    a: Vec<T>,
}

pub(crate) struct Cache<T> {
    tokens: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    pooled: Vec<T>,
    z_norm: T,
    out: Vec<T>,
}

impl<T: Scalar> Cache<T> {
    pub fn output(&self) -> &[T] {
        &self.out
    }
}

/// Sinusoidal position code: sin on even dims, cos on odd dims.
pub fn position_code<T: Scalar>(pos: usize, dim: usize, out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate().take(dim) {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        *o = T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

fn layer_norm<T: Scalar>(
    x: &[T],
    n: usize,
    d: usize,
    gain: &[T],
    bias: &[T],
    xhat: &mut [T],
    rstd: &mut [T],
    y: &mut [T],
) {
    let dn = T::of(d as f64);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mu = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let xh = (row[c] - mu) * rs;
            xhat[r * d + c] = xh;
            y[r * d + c] = xh * gain[c] + bias[c];
        }
    }
}

/// Accumulates input, gain and bias gradients of a layer norm.
fn layer_norm_backward<T: Scalar>(
    gy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    n: usize,
    d: usize,
    gx: &mut [T],
    ggain: &mut [T],
    gbias: &mut [T],
) {
    let dn = T::of(d as f64);
    let mut gxhat = vec![T::zero(); d];
    for r in 0..n {
        let gyr = &gy[r * d..(r + 1) * d];
        let xhr = &xhat[r * d..(r + 1) * d];
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for c in 0..d {
            ggain[c] = ggain[c] + gyr[c] * xhr[c];
            gbias[c] = gbias[c] + gyr[c];
            gxhat[c] = gyr[c] * gain[c];
            mean_g = mean_g + gxhat[c];
            mean_gx = mean_gx + gxhat[c] * xhr[c];
        }
        mean_g = mean_g / dn;
        mean_gx = mean_gx / dn;
        for c in 0..d {
            gx[r * d + c] = gx[r * d + c] + rstd[r] * (gxhat[c] - mean_g - xhr[c] * mean_gx);
        }
    }
}

pub(crate) fn forward<T: Scalar>(params: &ParamSet<T>, cfg: &EncoderConfig, tokens: &[u32]) -> Cache<T> {
    let n = tokens.len();
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    let heads = cfg.num_heads;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let emb = params.at(EMBEDDING);
    let mut x = vec![T::zero(); n * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let row = &mut x[t * d..(t + 1) * d];
        position_code(t, d, row);
        for (r, &e) in row.iter_mut().zip(&emb[tok as usize * d..(tok as usize + 1) * d]) {
            *r = *r + e;
        }
    }

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let p = |s| params.at(layer_slot(l, s));
        let mut c = LayerCache {
            xhat1: vec![T::zero(); n * d],
            rstd1: vec![T::zero(); n],
            h1: vec![T::zero(); n * d],
            q: vec![T::zero(); n * d],
            k: vec![T::zero(); n * d],
            v: vec![T::zero(); n * d],
            attn: vec![T::zero(); heads * n * n],
            o: vec![T::zero(); n * d],
            xhat2: vec![T::zero(); n * d],
            rstd2: vec![T::zero(); n],
            h2: vec![T::zero(); n * d],
            u: vec![T::zero(); n * f],
            a: vec![T::zero(); n * f],
        };
        layer_norm(&x, n, d, p(slot::LN1_G), p(slot::LN1_B), &mut c.xhat1, &mut c.rstd1, &mut c.h1);
        matmul(&c.h1, p(slot::WQ), n, d, d, &mut c.q);
        matmul(&c.h1, p(slot::WK), n, d, d, &mut c.k);
        matmul(&c.h1, p(slot::WV), n, d, d, &mut c.v);

        for h in 0..heads {
            let off = h * dh;
            let a = &mut c.attn[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let qi = &c.q[i * d + off..i * d + off + dh];
                let row = &mut a[i * n..(i + 1) * n];
                let mut max = T::neg_infinity();
                for j in 0..n {
                    let kj = &c.k[j * d + off..j * d + off + dh];
                    let s = crate::tensor::dot(qi, kj) * scale;
                    row[j] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut sum = T::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum = sum + *s;
                }
                for s in row.iter_mut() {
                    *s = *s / sum;
                }
                let oi = &mut c.o[i * d + off..i * d + off + dh];
                for j in 0..n {
                    let w = row[j];
                    let vj = &c.v[j * d + off..j * d + off + dh];
                    for (o, &vv) in oi.iter_mut().zip(vj) {
                        *o = *o + w * vv;
                    }
                }
            }
        }

        let mut tmp = vec![T::zero(); n * d];
        matmul(&c.o, p(slot::WO), n, d, d, &mut tmp);
        for (xv, &t) in x.iter_mut().zip(&tmp) {
            *xv = *xv + t;
        }

        layer_norm(&x, n, d, p(slot::LN2_G), p(slot::LN2_B), &mut c.xhat2, &mut c.rstd2, &mut c.h2);
        matmul(&c.h2, p(slot::W1), n, d, f, &mut c.u);
        let b1 = p(slot::B1);
        for r in 0..n {
            for j in 0..f {
                let u = c.u[r * f + j] + b1[j];
                c.u[r * f + j] = u;
                c.a[r * f + j] = gelu(u);
            }
        }
        matmul(&c.a, p(slot::W2), n, f, d, &mut tmp);
        let b2 = p(slot::B2);
        for r in 0..n {
            for j in 0..d {
                x[r * d + j] = x[r * d + j] + tmp[r * d + j] + b2[j];
            }
        }
        layers.push(c);
    }

    let mut pooled = vec![T::zero(); d];
    for r in 0..n {
        for (pv, &xv) in pooled.iter_mut().zip(&x[r * d..(r + 1) * d]) {
            *pv = *pv + xv;
        }
    }
    let denom = T::of(n.max(1) as f64);
    for pv in pooled.iter_mut() {
        *pv = *pv / denom;
    }
    let (out, z_norm) = super::project(params.projection(), &pooled, cfg.bottleneck_dim);
    Cache {
        tokens: tokens.to_vec(),
        layers,
        pooled,
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
    let n = cache.tokens.len();
    if n == 0 || cache.z_norm == T::zero() {
        return;
    }
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    let heads = cfg.num_heads;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let g_pooled = super::project_backward(
        params.projection(),
        &cache.pooled,
        &cache.out,
        cache.z_norm,
        g_out,
        cfg.bottleneck_dim,
        grads.projection_mut(),
    );
    let inv_n = T::one() / T::of(n as f64);
    let mut gx = vec![T::zero(); n * d];
    for r in 0..n {
        for c in 0..d {
            gx[r * d + c] = g_pooled[c] * inv_n;
        }
    }

    let mut g_tmp = vec![T::zero(); n * d];
    for l in (0..cfg.num_layers).rev() {
        let c = &cache.layers[l];
        let s = |which| layer_slot(l, which);

        // FFN branch: x_out = x_mid + gelu(h2 W1 + b1) W2 + b2
        {
            let gb2 = grads.at_mut(s(slot::B2));
            for r in 0..n {
                for j in 0..d {
                    gb2[j] = gb2[j] + gx[r * d + j];
                }
            }
        }
        matmul_at_acc(&c.a, &gx, n, f, d, grads.at_mut(s(slot::W2)));
        let mut g_u = vec![T::zero(); n * f];
        matmul_bt(&gx, params.at(s(slot::W2)), n, f, d, &mut g_u);
        for (gu, &u) in g_u.iter_mut().zip(&c.u) {
            *gu = *gu * gelu_grad(u);
        }
        {
            let gb1 = grads.at_mut(s(slot::B1));
            for r in 0..n {
                for j in 0..f {
                    gb1[j] = gb1[j] + g_u[r * f + j];
                }
            }
        }
        matmul_at_acc(&c.h2, &g_u, n, d, f, grads.at_mut(s(slot::W1)));
        matmul_bt(&g_u, params.at(s(slot::W1)), n, d, f, &mut g_tmp);
        {
            let (gg, gb) = two_mut(grads, s(slot::LN2_G), s(slot::LN2_B));
            layer_norm_backward(&g_tmp, &c.xhat2, &c.rstd2, params.at(s(slot::LN2_G)), n, d, &mut gx, gg, gb);
        }

        // attention branch: x_mid = x_in + attn(h1) Wo
        matmul_at_acc(&c.o, &gx, n, d, d, grads.at_mut(s(slot::WO)));
        let mut g_o = vec![T::zero(); n * d];
        matmul_bt(&gx, params.at(s(slot::WO)), n, d, d, &mut g_o);

        let mut g_q = vec![T::zero(); n * d];
        let mut g_k = vec![T::zero(); n * d];
        let mut g_v = vec![T::zero(); n * d];
        let mut g_a = vec![T::zero(); n];
        for h in 0..heads {
            let off = h * dh;
            let a = &c.attn[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let goi = &g_o[i * d + off..i * d + off + dh];
                let arow = &a[i * n..(i + 1) * n];
                let mut inner = T::zero();
                for j in 0..n {
                    let vj = &c.v[j * d + off..j * d + off + dh];
                    g_a[j] = crate::tensor::dot(goi, vj);
                    inner = inner + g_a[j] * arow[j];
                    let gvj = &mut g_v[j * d + off..j * d + off + dh];
                    for (gv, &go) in gvj.iter_mut().zip(goi) {
                        *gv = *gv + arow[j] * go;
                    }
                }
                for j in 0..n {
                    let gs = arow[j] * (g_a[j] - inner) * scale;
                    if gs == T::zero() {
                        continue;
                    }
                    for t in 0..dh {
                        g_q[i * d + off + t] = g_q[i * d + off + t] + gs * c.k[j * d + off + t];
                        g_k[j * d + off + t] = g_k[j * d + off + t] + gs * c.q[i * d + off + t];
                    }
                }
            }
        }
        matmul_at_acc(&c.h1, &g_q, n, d, d, grads.at_mut(s(slot::WQ)));
        matmul_at_acc(&c.h1, &g_k, n, d, d, grads.at_mut(s(slot::WK)));
        matmul_at_acc(&c.h1, &g_v, n, d, d, grads.at_mut(s(slot::WV)));
        let mut g_h1 = vec![T::zero(); n * d];
        for (g, w) in [(&g_q, slot::WQ), (&g_k, slot::WK), (&g_v, slot::WV)] {
            matmul_bt(g, params.at(s(w)), n, d, d, &mut g_tmp);
            for (a, &b) in g_h1.iter_mut().zip(&g_tmp) {
                *a = *a + b;
            }
        }
        {
            let (gg, gb) = two_mut(grads, s(slot::LN1_G), s(slot::LN1_B));
            layer_norm_backward(&g_h1, &c.xhat1, &c.rstd1, params.at(s(slot::LN1_G)), n, d, &mut gx, gg, gb);
        }
    }

    let gemb = grads.at_mut(EMBEDDING);
    for (t, &tok) in cache.tokens.iter().enumerate() {
        let dst = &mut gemb[tok as usize * d..(tok as usize + 1) * d];
        for (g, &v) in dst.iter_mut().zip(&gx[t * d..(t + 1) * d]) {
            *g = *g + v;
        }
    }
}

/// Disjoint mutable borrows of two adjacent arrays (`a < b`).
fn two_mut<T: Scalar>(grads: &mut ParamSet<T>, a: usize, b: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a < b);
    let (lo, hi) = grads.tensors_mut().split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}
