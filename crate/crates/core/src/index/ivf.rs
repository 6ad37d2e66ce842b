//! Inverted-file index: spherical k-means centroids with one posting list
//! per cluster.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_query, to_hits, Candidate, EmbeddingStore, Hit, TopK};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{dot, normalize_in_place, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    centroids: Matrix<f32>,
    postings: Vec<Vec<u32>>,
    iterations: usize,
}

impl IvfIndex {
    pub fn num_clusters(&self) -> usize {
        self.postings.len()
    }

    pub fn centroids(&self) -> &Matrix<f32> {
        &self.centroids
    }

    /// Row indices per cluster, ascending.
    pub fn postings(&self) -> &[Vec<u32>] {
        &self.postings
    }

    /// Lloyd iterations run before assignments stopped changing.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `GTRI`, version, C, d, iterations, centroids, then each posting
    /// list as a u64 length and u32 row indices.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(IVF_MAGIC);
        w.u32(IVF_VERSION);
        w.u64(self.centroids.rows() as u64);
        w.u32(self.centroids.cols() as u32);
        w.u64(self.iterations as u64);
        w.f32s(self.centroids.as_slice());
        for p in &self.postings {
            w.u64(p.len() as u64);
            for &r in p {
                w.u32(r);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(IVF_MAGIC)?;
        r.version(IVF_VERSION)?;
        let c = r.usize("cluster count")?;
        let d = r.u32("dim")? as usize;
        let iterations = r.usize("iterations")?;
        let n = c.checked_mul(d).ok_or_else(|| r.corrupt("centroid size overflows"))?;
        let centroids = Matrix::from_vec(c, d, r.f32s(n, "centroids")?)?;
        let mut postings = Vec::with_capacity(c.min(1 << 20));
        for _ in 0..c {
            let len = r.usize("posting length")?;
            let mut list = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                list.push(r.u32("row index")?);
            }
            postings.push(list);
        }
        r.finish()?;
        Ok(IvfIndex {
            centroids,
            postings,
            iterations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    /// Loads an index and checks that it partitions the rows of `store`.
    pub fn load(path: &Path, store: &EmbeddingStore) -> Result<Self> {
        let ivf = Self::from_bytes(&read_file(path)?)?;
        let mut seen = vec![false; store.len()];
        for &r in ivf.postings.iter().flatten() {
            match seen.get_mut(r as usize) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "index {} does not match the store (row {r})",
                        path.display()
                    )))
                }
            }
        }
        if seen.iter().any(|s| !s) || (!store.is_empty() && ivf.centroids.cols() != store.dim()) {
            return Err(Error::InvalidArgument(format!(
                "index {} does not cover the store",
                path.display()
            )));
        }
        Ok(ivf)
    }
}

pub const IVF_MAGIC: &[u8; 4] = b"GTRI";
pub const IVF_VERSION: u32 = 1;

/// Highest dot product wins; ties go to the lower centroid index.
fn nearest(centroids: &Matrix<f32>, row: &[f32]) -> u32 {
    let mut best = 0;
    let mut best_score = f32::NEG_INFINITY;
    for c in 0..centroids.rows() {
        let s = dot(centroids.row(c), row);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best as u32
}

fn kmeans_pp(store: &EmbeddingStore, clusters: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = store.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(store.row(i), store.row(chosen[0])))
        .collect();
    while chosen.len() < clusters {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive mass")
        } else {
            // Remaining rows duplicate chosen ones.
            (0..n).find(|i| !chosen.contains(i)).expect("clusters <= rows")
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(store.row(i), store.row(next)));
        }
    }
    chosen
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Seeded spherical k-means with k-means++ seeding. Runs at most `iters`
/// Lloyd rounds and stops early once assignments are stable.
pub fn build_ivf(store: &EmbeddingStore, clusters: usize, seed: u64, iters: usize) -> Result<IvfIndex> {
    if clusters == 0 || clusters > store.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster count {clusters} must be in 1..={}",
            store.len()
        )));
    }
    let d = store.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = kmeans_pp(store, clusters, &mut rng);
    let mut centroids = Matrix::zeros(clusters, d);
    for (c, &r) in seeds.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(store.row(r));
    }

    let assign = |centroids: &Matrix<f32>| -> Vec<u32> {
        (0..store.len())
            .into_par_iter()
            .map(|i| nearest(centroids, store.row(i)))
            .collect()
    };
    let mut labels = assign(&centroids);
    let mut rounds = 0;
    while rounds < iters {
        rounds += 1;
        let mut sums = vec![0f64; clusters * d];
        let mut counts = vec![0usize; clusters];
        for (i, &c) in labels.iter().enumerate() {
            counts[c as usize] += 1;
            for (s, &x) in sums[c as usize * d..(c as usize + 1) * d].iter_mut().zip(store.row(i)) {
                *s += f64::from(x);
            }
        }
        for c in 0..clusters {
            if counts[c] == 0 {
                continue;
            }
            let row = centroids.row_mut(c);
            for (o, &s) in row.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *o = s as f32;
            }
            normalize_in_place(row);
        }
        let next = assign(&centroids);
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }

    let mut postings = vec![Vec::new(); clusters];
    for (i, &c) in labels.iter().enumerate() {
        postings[c as usize].push(i as u32);
    }
    Ok(IvfIndex {
        centroids,
        postings,
        iterations: rounds,
    })
}

/// Scans the postings of the `n_probe` clusters whose centroids score
/// highest against the query.
pub fn search_ivf(index: &IvfIndex, store: &EmbeddingStore, query: &[f32], k: usize, n_probe: usize) -> Result<Vec<Hit>> {
    check_query(store, query, k)?;
    let c = index.num_clusters();
    if n_probe == 0 || n_probe > c {
        return Err(Error::InvalidArgument(format!("n_probe {n_probe} must be in 1..={c}")));
    }
    let mut order: Vec<(f32, usize)> = (0..c).map(|i| (dot(index.centroids.row(i), query), i)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut top = TopK::new(k);
    for &(_, cluster) in &order[..n_probe] {
        for &row in &index.postings[cluster] {
            let r = row as usize;
            top.push(Candidate {
                score: dot(store.row(r), query),
                rank: store.id_rank[r],
                row,
            });
        }
    }
    Ok(to_hits(store, top.into_sorted()))
}
