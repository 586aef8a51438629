use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relatedness threshold: pairs strictly below it are mined.
pub const DEFAULT_PAIR_THRESHOLD: u32 = 30;

const DIGEST_BUCKETS: usize = 128;
const DISTANCE_SCALE: f64 = 150.0;

/// Byte 3-gram histogram of an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityDigest {
    counts: Vec<u16>,
    total: u32,
}

impl SimilarityDigest {
    pub fn new(bytes: &[u8]) -> Self {
        let mut counts = vec![0u16; DIGEST_BUCKETS];
        let mut total = 0u32;
        for w in bytes.windows(3) {
            counts[trigram_bucket(w[0], w[1], w[2])] = counts[trigram_bucket(w[0], w[1], w[2])].saturating_add(1);
            total += 1;
        }
        SimilarityDigest { counts, total }
    }

    /// Symmetric integer distance; 0 for identical histograms. Related
    /// artifacts fall well below 30, unrelated ones far above.
    pub fn distance(&self, other: &SimilarityDigest) -> u32 {
        let denom = self.total + other.total;
        if denom == 0 {
            return 0;
        }
        let l1: u32 = self.counts.iter().zip(&other.counts).map(|(&a, &b)| a.abs_diff(b) as u32).sum();
        (DISTANCE_SCALE * l1 as f64 / denom as f64).round() as u32
    }
}

fn trigram_bucket(a: u8, b: u8, c: u8) -> usize {
    let x = (a as u32) | (b as u32) << 8 | (c as u32) << 16;
    (x.wrapping_mul(0x9E37_79B1) >> 25) as usize
}

/// Reference similarity distance between two byte artifacts.
pub fn digest_distance(a: &[u8], b: &[u8]) -> u32 {
    SimilarityDigest::new(a).distance(&SimilarityDigest::new(b))
}

/// Unordered anchor/positive index pairs with `i < j`, sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Every unordered pair of distinct items with `distance < threshold`,
/// uniformly downsampled to `max_pairs` when given.
pub fn mine_pairs<D, R>(n: usize, distance: D, threshold: u32, max_pairs: Option<usize>, rng: &mut R) -> PairSet
where
    D: Fn(usize, usize) -> u32 + Sync,
    R: Rng + ?Sized,
{
    let found: BTreeSet<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let distance = &distance;
            (i + 1..n).filter(move |&j| distance(i, j) < threshold).map(move |j| (i, j))
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = found.into_iter().collect();
    if let Some(max) = max_pairs {
        if pairs.len() > max {
            let mut keep = sample(rng, pairs.len(), max).into_vec();
            keep.sort_unstable();
            pairs = keep.into_iter().map(|k| pairs[k]).collect();
        }
    }
    PairSet { pairs }
}

/// Pairs over artifact blobs using the reference digest.
pub fn mine_blob_pairs<R: Rng + ?Sized>(
    blobs: &[&[u8]],
    threshold: u32,
    max_pairs: Option<usize>,
    rng: &mut R,
) -> PairSet {
    let digests: Vec<SimilarityDigest> = blobs.par_iter().map(|b| SimilarityDigest::new(b)).collect();
    mine_pairs(digests.len(), |i, j| digests[i].distance(&digests[j]), threshold, max_pairs, rng)
}
