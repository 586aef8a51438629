//! Embedding quality measures: nearest-neighbor family accuracy, k-NN tag
//! F1, K-Means and complete-linkage clustering with entropy-based scores.

mod cluster;
mod scores;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;
pub use cluster::{hac_complete, kmeans, KMeansResult};
pub use scores::{clustering_scores, clustering_scores_by_id, ClusterScores};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("k = {k} must be below the {n} available points")]
    KTooLarge { k: usize, n: usize },
    #[error("id sets differ: {0}")]
    IdMismatch(String),
    #[error("{what}: {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), EvalError> {
    if expected != got {
        return Err(EvalError::LengthMismatch { what, expected, got });
    }
    Ok(())
}

pub(crate) fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Indices of items whose label occurs at least twice.
pub fn non_singleton<L: Eq + Hash>(labels: &[L]) -> Vec<usize> {
    let mut counts: HashMap<&L, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    (0..labels.len()).filter(|&i| counts[&labels[i]] >= 2).collect()
}

/// Nearest row of `train` to `q`, skipping `exclude`; ties go to the lower index.
fn nearest<T: Scalar>(train: ArrayView2<'_, T>, q: ArrayView1<'_, T>, exclude: Option<usize>) -> Option<usize> {
    let mut best: Option<(T, usize)> = None;
    for (i, r) in train.rows().into_iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d = sq_dist(r, q);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|b| b.1)
}

/// Fraction of test points whose nearest training point has the same label.
pub fn one_nn_accuracy<T: Scalar, L: PartialEq + Sync>(
    train: ArrayView2<'_, T>,
    train_labels: &[L],
    test: ArrayView2<'_, T>,
    test_labels: &[L],
) -> Result<f64, EvalError> {
    check_len("train labels", train.nrows(), train_labels.len())?;
    check_len("test labels", test.nrows(), test_labels.len())?;
    if train.nrows() == 0 || test.nrows() == 0 {
        return Err(EvalError::Empty);
    }
    let correct = (0..test.nrows())
        .into_par_iter()
        .filter(|&i| nearest(train, test.row(i), None).is_some_and(|j| train_labels[j] == test_labels[i]))
        .count();
    Ok(correct as f64 / test.nrows() as f64)
}

/// Leave-one-out 1-NN accuracy within one set (self-matches excluded).
pub fn one_nn_accuracy_self<T: Scalar, L: PartialEq + Sync>(vectors: ArrayView2<'_, T>, labels: &[L]) -> Result<f64, EvalError> {
    check_len("labels", vectors.nrows(), labels.len())?;
    if vectors.nrows() < 2 {
        return Err(EvalError::Empty);
    }
    let correct = (0..vectors.nrows())
        .into_par_iter()
        .filter(|&i| nearest(vectors, vectors.row(i), Some(i)).is_some_and(|j| labels[j] == labels[i]))
        .count();
    Ok(correct as f64 / vectors.nrows() as f64)
}

/// Indices of the `k` nearest other points (ascending distance, then index).
pub fn knn_excluding_self<T: Scalar>(vectors: ArrayView2<'_, T>, i: usize, k: usize) -> Vec<usize> {
    let q = vectors.row(i);
    let mut d: Vec<(T, usize)> =
        (0..vectors.nrows()).filter(|&j| j != i).map(|j| (sq_dist(vectors.row(j), q), j)).collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|x| x.1).collect()
}

/// Per-tag confusion counts over (query, neighbor) pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision or recall had a zero denominator and was reported as 0.
    pub undefined: bool,
}

impl TagScore {
    fn finish(mut self) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        self.undefined = p.is_none() || r.is_none();
        self.precision = p.unwrap_or(0.0);
        self.recall = r.unwrap_or(0.0);
        self.f1 = if self.precision + self.recall > 0.0 {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        } else {
            0.0
        };
        self
    }
}

/// k-NN tag agreement: each neighbor predicts the query's tag set.
pub fn knn_tag_f1<T: Scalar>(
    vectors: ArrayView2<'_, T>,
    tags: &[BTreeSet<String>],
    queries: &[usize],
    k: usize,
    tag_names: &[String],
) -> Result<BTreeMap<String, TagScore>, EvalError> {
    let n = vectors.nrows();
    check_len("tag sets", n, tags.len())?;
    if n == 0 || queries.is_empty() {
        return Err(EvalError::Empty);
    }
    if k >= n {
        return Err(EvalError::KTooLarge { k, n });
    }
    let neighbors: Vec<Vec<usize>> = queries.par_iter().map(|&i| knn_excluding_self(vectors, i, k)).collect();
    let mut out = BTreeMap::new();
    for tag in tag_names {
        let mut s = TagScore::default();
        for (&q, nb) in queries.iter().zip(&neighbors) {
            let truth = tags[q].contains(tag);
            for &j in nb {
                match (truth, tags[j].contains(tag)) {
                    (true, true) => s.tp += 1,
                    (false, true) => s.fp += 1,
                    (true, false) => s.fn_ += 1,
                    (false, false) => s.tn += 1,
                }
            }
        }
        out.insert(tag.clone(), s.finish());
    }
    Ok(out)
}

/// Metric values plus run metadata, serialized as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vectors_sha256: Option<String>,
}
