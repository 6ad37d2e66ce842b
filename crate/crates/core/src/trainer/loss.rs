//! In-batch sampled softmax losses.
//!
//! For query row `i` the candidates are every in-batch positive followed by
//! every hard negative in the batch; the target is positive `i`. The loss is
//! the batch mean of `-log softmax(q_i · c / τ)[i]`. Inputs are expected to
//! be unit rows, so the dot product is the cosine similarity.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub grad_queries: Matrix<T>,
    pub grad_positives: Matrix<T>,
    /// Empty (0 rows) when no negatives were given.
    pub grad_negatives: Matrix<T>,
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a).as_f64(), norm(b).as_f64());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b).as_f64() / (na * nb)).clamp(-1.0, 1.0))
}

fn check(rows: &Matrix<impl Scalar>, cols: &Matrix<impl Scalar>, tau: f64) -> Result<()> {
    if rows.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    if rows.rows() != cols.rows() || rows.cols() != cols.cols() {
        return Err(Error::Shape(format!(
            "queries {}x{} vs positives {}x{}",
            rows.rows(),
            rows.cols(),
            cols.rows(),
            cols.cols()
        )));
    }
    Ok(())
}

/// One softmax direction. Returns (loss, grad wrt anchors, grad wrt every
/// candidate row: positives then negatives).
fn directional<T: Scalar>(
    anchors: &Matrix<T>,
    positives: &Matrix<T>,
    negatives: &Matrix<T>,
    tau: f64,
) -> (f64, Matrix<T>, Matrix<T>) {
    let b = anchors.rows();
    let m = negatives.rows();
    let dim = anchors.cols();
    let width = b + m;
    let candidate = |j: usize| {
        if j < b {
            positives.row(j)
        } else {
            negatives.row(j - b)
        }
    };

    let mut g_anchor = Matrix::zeros(b, dim);
    let mut g_cand = Matrix::zeros(width, dim);
    let mut total = 0.0f64;
    let mut logits = vec![0.0f64; width];
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let a = anchors.row(i);
        for (j, l) in logits.iter_mut().enumerate() {
            *l = dot(a, candidate(j)).as_f64() / tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[i];

        for j in 0..width {
            let p = (logits[j] - max).exp() / sum;
            let g = (p - if j == i { 1.0 } else { 0.0 }) * inv_b / tau;
            if g == 0.0 {
                continue;
            }
            let gt = T::of(g);
            let c = candidate(j);
            let ga = g_anchor.row_mut(i);
            for k in 0..dim {
                ga[k] = ga[k] + gt * c[k];
            }
            let gc = g_cand.row_mut(j);
            for k in 0..dim {
                gc[k] = gc[k] + gt * a[k];
            }
        }
    }
    (total * inv_b, g_anchor, g_cand)
}

fn split_candidates<T: Scalar>(g: Matrix<T>, b: usize) -> (Matrix<T>, Matrix<T>) {
    let (rows, dim) = (g.rows(), g.cols());
    let mut data = g.into_vec();
    let neg = data.split_off(b * dim);
    (
        Matrix::from_vec(b, dim, data).expect("shape"),
        Matrix::from_vec(rows - b, dim, neg).expect("shape"),
    )
}

/// Softmax over in-batch positives only.
pub fn in_batch_loss<T: Scalar>(queries: &Matrix<T>, positives: &Matrix<T>, tau: f64) -> Result<LossOutput<T>> {
    in_batch_loss_with_negatives(queries, positives, &Matrix::zeros(0, queries.cols()), tau)
}

/// Softmax over in-batch positives plus every hard negative of the batch.
/// With zero negative rows this is exactly [`in_batch_loss`].
pub fn in_batch_loss_with_negatives<T: Scalar>(
    queries: &Matrix<T>,
    positives: &Matrix<T>,
    negatives: &Matrix<T>,
    tau: f64,
) -> Result<LossOutput<T>> {
    check(queries, positives, tau)?;
    if negatives.rows() > 0 && negatives.cols() != queries.cols() {
        return Err(Error::Shape("negative rows have the wrong dimension".into()));
    }
    let b = queries.rows();
    let (loss, gq, gc) = directional(queries, positives, negatives, tau);
    let (gp, gn) = split_candidates(gc, b);
    Ok(LossOutput {
        loss,
        grad_queries: gq,
        grad_positives: gp,
        grad_negatives: gn,
    })
}

/// Mean of the query→passage loss (with hard negatives) and the
/// passage→query loss (in-batch queries only).
pub fn bidirectional_loss<T: Scalar>(
    queries: &Matrix<T>,
    positives: &Matrix<T>,
    negatives: &Matrix<T>,
    tau: f64,
) -> Result<LossOutput<T>> {
    let forward = in_batch_loss_with_negatives(queries, positives, negatives, tau)?;
    let b = queries.rows();
    let empty = Matrix::zeros(0, queries.cols());
    let (back_loss, g_p_anchor, g_q_cand) = directional(positives, queries, &empty, tau);
    let half = T::of(0.5);
    let combine = |a: &Matrix<T>, b: &Matrix<T>| {
        let data = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| half * (x + y))
            .collect();
        Matrix::from_vec(a.rows(), a.cols(), data).expect("shape")
    };
    let (g_q_cand, _) = split_candidates(g_q_cand, b);
    let mut grad_negatives = forward.grad_negatives;
    for x in grad_negatives.as_mut_slice() {
        *x = *x * half;
    }
    Ok(LossOutput {
        loss: 0.5 * (forward.loss + back_loss),
        grad_queries: combine(&forward.grad_queries, &g_q_cand),
        grad_positives: combine(&forward.grad_positives, &g_p_anchor),
        grad_negatives,
    })
}
