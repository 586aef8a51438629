use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{sq_dist, EvalError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    /// Cluster index per point, `0..K`.
    pub assignment: Vec<usize>,
    pub centroids: Array2<T>,
    /// Inertia after each Lloyd iteration.
    pub inertia: Vec<T>,
    pub iterations: usize,
}

fn nearest_centroid<T: Scalar>(x: ndarray::ArrayView1<'_, T>, centroids: ArrayView2<'_, T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<T: Scalar, R: Rng>(x: ArrayView2<'_, T>, k: usize, rng: &mut R) -> Array2<T> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first)).to_f64_lossy()).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            // guard against rounding leaving us on a zero-weight point
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)).to_f64_lossy());
        }
    }
    centroids
}

/// K-Means with seeded k-means++ initialization and Lloyd iterations.
/// An empty cluster is re-seeded with the point farthest from its centroid.
pub fn kmeans<T: Scalar>(x: ArrayView2<'_, T>, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult<T>, EvalError> {
    let n = x.nrows();
    if n == 0 || k == 0 {
        return Err(EvalError::Empty);
    }
    if k > n {
        return Err(EvalError::KTooLarge { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let nearest: Vec<(usize, T)> =
            (0..x.nrows()).into_par_iter().map(|i| nearest_centroid(x.row(i), centroids.view())).collect();
        let changed = nearest.iter().zip(&assignment).any(|(a, &b)| a.0 != b);
        let mut dist: Vec<T> = nearest.iter().map(|p| p.1).collect();
        assignment = nearest.iter().map(|p| p.0).collect();

        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // farthest point from its own centroid, ties to the lowest index
            let far = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                });
            let Some(far) = far else { break };
            counts[assignment[far]] -= 1;
            assignment[far] = c;
            counts[c] = 1;
            dist[far] = T::zero();
            centroids.row_mut(c).assign(&x.row(far));
        }
        let mut sums = Array2::<T>::zeros(centroids.dim());
        for (i, &a) in assignment.iter().enumerate() {
            let mut row = sums.row_mut(a);
            row += &x.row(i);
        }
        for c in 0..k {
            let inv = T::one() / T::from_usize_lossy(counts[c]);
            centroids.row_mut(c).assign(&sums.row(c).mapv(|v| v * inv));
        }
        let total = (0..n).fold(T::zero(), |acc, i| acc + sq_dist(x.row(i), centroids.row(assignment[i])));
        inertia.push(total);
        if !changed {
            break;
        }
    }
    Ok(KMeansResult { assignment, centroids, inertia, iterations })
}

/// Agglomerative clustering under complete linkage cut at `k` clusters.
///
/// Uses the nearest-neighbor chain algorithm; clusters are numbered by
/// their smallest member.
pub fn hac_complete<T: Scalar>(x: ArrayView2<'_, T>, k: usize) -> Result<Vec<usize>, EvalError> {
    let n = x.nrows();
    if n == 0 || k == 0 {
        return Err(EvalError::Empty);
    }
    if k > n {
        return Err(EvalError::KTooLarge { k, n });
    }
    let mut d: Vec<T> = vec![T::zero(); n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = sq_dist(x.row(i), x.row(j)).sqrt();
        }
    });
    let mut active = vec![true; n];
    let mut merges: Vec<(T, usize, usize)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("active cluster"));
        }
        loop {
            let a = *chain.last().expect("nonempty chain");
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            // nearest active neighbor; prefer the chain predecessor on ties
            let mut best: Option<(T, usize)> = prev.map(|p| (d[a * n + p], p));
            for b in 0..n {
                if b == a || !active[b] {
                    continue;
                }
                let v = d[a * n + b];
                if best.is_none_or(|(bv, bi)| v < bv || (v == bv && b < bi && Some(bi) != prev)) {
                    best = Some((v, b));
                }
            }
            let (h, b) = best.expect("another active cluster");
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                let (keep, gone) = (a.min(b), a.max(b));
                merges.push((h, keep, gone));
                active[gone] = false;
                for j in 0..n {
                    if active[j] && j != keep {
                        let v = d[keep * n + j].max(d[gone * n + j]);
                        d[keep * n + j] = v;
                        d[j * n + keep] = v;
                    }
                }
                remaining -= 1;
                break;
            }
            chain.push(b);
        }
    }
    // stable sort keeps discovery order among equal heights
    merges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(_, a, b) in merges.iter().take(n - k) {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[i] = label[r];
    }
    Ok(out)
}
