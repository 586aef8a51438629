//! Dynamic Continuous Indexing: exact-metric k-nearest-neighbor search
//! driven by random one-dimensional projections.

mod store;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;
pub use store::{VectorStore, STORE_MAGIC, STORE_VERSION};
use store::Cursor;

pub const INDEX_MAGIC: &[u8; 8] = b"AV2VDCI\0";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DciError {
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("cannot index an empty set")]
    Empty,
    #[error("k = {k} exceeds the {n} indexed points")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid index config: {0}")]
    Config(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("file version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for DciError {
    fn from(e: std::io::Error) -> Self {
        DciError::Io(e.to_string())
    }
}

/// Order in which simple indices are advanced during a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Traversal {
    /// Always advance the globally closest projection next.
    #[default]
    Prioritized,
    /// Advance every simple index by one step in turn.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DciConfig {
    /// Simple indices per composite index.
    pub m: usize,
    /// Composite indices.
    pub l: usize,
    /// Maximum candidates whose true distance is evaluated per query.
    pub budget: usize,
    pub seed: u64,
    pub traversal: Traversal,
}

impl Default for DciConfig {
    fn default() -> Self {
        DciConfig { m: 10, l: 2, budget: 5000, seed: 0, traversal: Traversal::Prioritized }
    }
}

impl DciConfig {
    pub fn validate(&self) -> Result<(), DciError> {
        if self.m == 0 || self.l == 0 {
            return Err(DciError::Config("m and l must be positive".into()));
        }
        if self.m > u8::MAX as usize {
            return Err(DciError::Config("m must be at most 255".into()));
        }
        if self.budget == 0 {
            return Err(DciError::Config("budget must be positive".into()));
        }
        Ok(())
    }
}

/// One query answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
}

/// Query result plus the number of candidates whose distance was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult<T> {
    pub neighbors: Vec<Neighbor<T>>,
    pub visited: usize,
}

/// Immutable DCI index over `n` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DciIndex<T> {
    config: DciConfig,
    vectors: Array2<T>,
    /// `l·m × D` unit directions; rows `j·m .. (j+1)·m` form composite `j`.
    directions: Array2<T>,
    /// Per direction, `(projection, ordinal)` sorted ascending.
    sorted: Vec<Vec<(T, u32)>>,
}

fn cmp_scalar<T: Scalar>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Rows of `vectors` as an array, checking a common dimension.
pub fn stack_rows<T: Scalar>(rows: &[Vec<T>]) -> Result<Array2<T>, DciError> {
    let dim = rows.first().ok_or(DciError::Empty)?.len();
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(DciError::DimensionMismatch { index: i, expected: dim, got: r.len() });
        }
        out.row_mut(i).assign(&ArrayView1::from(r));
    }
    Ok(out)
}

fn random_directions<T: Scalar>(count: usize, dim: usize, seed: u64) -> Array2<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Array2::<f64>::zeros((count, dim));
    for mut row in dirs.rows_mut() {
        loop {
            row.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    dirs.mapv(T::lit)
}

fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Sorts by distance, then ordinal.
fn sort_neighbors<T: Scalar>(v: &mut [Neighbor<T>]) {
    v.sort_by(|a, b| cmp_scalar(a.distance, b.distance).then(a.index.cmp(&b.index)));
}

/// Exact k nearest neighbors by full scan (ties by ascending ordinal).
pub fn brute_force_knn<T: Scalar>(vectors: ArrayView2<'_, T>, q: ArrayView1<'_, T>, k: usize) -> Vec<Neighbor<T>> {
    let mut all: Vec<Neighbor<T>> = vectors
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| Neighbor { index: i, distance: sq_dist(r, q).sqrt() })
        .collect();
    sort_neighbors(&mut all);
    all.truncate(k);
    all
}

/// Frontier of one simple index: the next unvisited entries on each side
/// of the query's projection.
struct Frontier {
    left: usize,
    right: usize,
}

impl<T: Scalar> DciIndex<T> {
    pub fn build(vectors: Array2<T>, config: DciConfig) -> Result<Self, DciError> {
        config.validate()?;
        if vectors.nrows() == 0 {
            return Err(DciError::Empty);
        }
        if vectors.nrows() > u32::MAX as usize {
            return Err(DciError::Config("too many points".into()));
        }
        let directions = random_directions::<T>(config.l * config.m, vectors.ncols(), config.seed);
        let proj = vectors.dot(&directions.t());
        let sorted = (0..proj.ncols())
            .into_par_iter()
            .map(|j| {
                let mut v: Vec<(T, u32)> = proj.column(j).iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
                v.sort_by(|a, b| cmp_scalar(a.0, b.0).then(a.1.cmp(&b.1)));
                v
            })
            .collect();
        Ok(DciIndex { config, vectors, directions, sorted })
    }

    pub fn config(&self) -> &DciConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }

    pub fn directions(&self) -> ArrayView2<'_, T> {
        self.directions.view()
    }

    /// Entries of simple index `i`, sorted by projection.
    pub fn simple_index(&self, i: usize) -> &[(T, u32)] {
        &self.sorted[i]
    }

    /// k nearest neighbors using the configured budget.
    pub fn query(&self, q: ArrayView1<'_, T>, k: usize) -> Result<QueryResult<T>, DciError> {
        self.query_with_budget(q, k, self.config.budget)
    }

    /// k nearest neighbors, evaluating at most `budget` candidates (raised
    /// to `k` when smaller). With `budget ≥ n` the answer is exact.
    pub fn query_with_budget(&self, q: ArrayView1<'_, T>, k: usize, budget: usize) -> Result<QueryResult<T>, DciError> {
        let n = self.len();
        if k > n {
            return Err(DciError::KTooLarge { k, n });
        }
        if q.len() != self.dim() {
            return Err(DciError::DimensionMismatch { index: 0, expected: self.dim(), got: q.len() });
        }
        if k == 0 {
            return Ok(QueryResult { neighbors: Vec::new(), visited: 0 });
        }
        let budget = budget.max(k).min(n);
        let (m, l) = (self.config.m, self.config.l);
        let qp: Vec<T> = self.directions.rows().into_iter().map(|d| d.dot(&q)).collect();
        let mut frontiers: Vec<Frontier> = self
            .sorted
            .iter()
            .zip(&qp)
            .map(|(s, &p)| {
                let right = s.partition_point(|e| e.0 < p);
                Frontier { left: right, right }
            })
            .collect();
        let mut hits = vec![0u8; l * n];
        let mut evaluated = vec![false; n];
        let mut best: Vec<Neighbor<T>> = Vec::with_capacity(budget);
        let mut visited = 0;

        let next = |f: &Frontier, s: &[(T, u32)], p: T| -> Option<(T, bool)> {
            let l = (f.left > 0).then(|| p - s[f.left - 1].0);
            let r = (f.right < s.len()).then(|| s[f.right].0 - p);
            match (l, r) {
                (Some(a), Some(b)) => Some(if b < a { (b, true) } else { (a, false) }),
                (Some(a), None) => Some((a, false)),
                (None, Some(b)) => Some((b, true)),
                (None, None) => None,
            }
        };
        let advance = |i: usize, right: bool, frontiers: &mut [Frontier]| -> u32 {
            let f = &mut frontiers[i];
            if right {
                f.right += 1;
                self.sorted[i][f.right - 1].1
            } else {
                f.left -= 1;
                self.sorted[i][f.left].1
            }
        };
        let mut on_hit = |i: usize, id: u32, best: &mut Vec<Neighbor<T>>, visited: &mut usize| {
            let slot = (i / m) * n + id as usize;
            hits[slot] += 1;
            if hits[slot] as usize == m && !evaluated[id as usize] {
                evaluated[id as usize] = true;
                *visited += 1;
                let d = sq_dist(self.vectors.row(id as usize), q).sqrt();
                best.push(Neighbor { index: id as usize, distance: d });
            }
        };

        match self.config.traversal {
            Traversal::Prioritized => {
                let mut heap = BinaryHeap::new();
                for i in 0..l * m {
                    if let Some((key, right)) = next(&frontiers[i], &self.sorted[i], qp[i]) {
                        heap.push(Reverse((Key(key.to_f64_lossy()), i, right)));
                    }
                }
                while visited < budget {
                    let Some(Reverse((_, i, right))) = heap.pop() else { break };
                    let id = advance(i, right, &mut frontiers);
                    on_hit(i, id, &mut best, &mut visited);
                    if let Some((key, right)) = next(&frontiers[i], &self.sorted[i], qp[i]) {
                        heap.push(Reverse((Key(key.to_f64_lossy()), i, right)));
                    }
                }
            }
            Traversal::RoundRobin => {
                let mut active = true;
                while visited < budget && active {
                    active = false;
                    for i in 0..l * m {
                        if visited >= budget {
                            break;
                        }
                        if let Some((_, right)) = next(&frontiers[i], &self.sorted[i], qp[i]) {
                            active = true;
                            let id = advance(i, right, &mut frontiers);
                            on_hit(i, id, &mut best, &mut visited);
                        }
                    }
                }
            }
        }
        sort_neighbors(&mut best);
        best.truncate(k);
        Ok(QueryResult { neighbors: best, visited })
    }

    /// Queries every row of `queries` in parallel.
    pub fn query_batch(&self, queries: ArrayView2<'_, T>, k: usize) -> Result<Vec<QueryResult<T>>, DciError> {
        (0..queries.nrows()).into_par_iter().map(|i| self.query(queries.row(i), k)).collect()
    }

    /// Writes the index structure (not the vectors).
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), DciError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.config.m as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.l as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.budget as u64).to_le_bytes());
        buf.extend_from_slice(&self.config.seed.to_le_bytes());
        buf.push(match self.config.traversal {
            Traversal::Prioritized => 0,
            Traversal::RoundRobin => 1,
        });
        for x in self.directions.iter() {
            buf.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
        for s in &self.sorted {
            for &(v, id) in s {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
                buf.extend_from_slice(&id.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads an index and attaches it to the vectors it was built from.
    pub fn read<R: Read>(mut r: R, vectors: Array2<T>) -> Result<Self, DciError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut c = Cursor::new(&bytes);
        if c.take(8)? != INDEX_MAGIC {
            return Err(DciError::CorruptFile("not a DCI index".into()));
        }
        let version = c.u32()?;
        if version != INDEX_VERSION {
            return Err(DciError::VersionMismatch { found: version, expected: INDEX_VERSION });
        }
        let dim = c.u32()? as usize;
        let n = c.u64()? as usize;
        let m = c.u32()? as usize;
        let l = c.u32()? as usize;
        let budget = c.u64()? as usize;
        let seed = c.u64()?;
        let traversal = match c.u8()? {
            0 => Traversal::Prioritized,
            1 => Traversal::RoundRobin,
            t => return Err(DciError::CorruptFile(format!("unknown traversal {t}"))),
        };
        if vectors.dim() != (n, dim) {
            return Err(DciError::CorruptFile(format!(
                "index covers {n}×{dim} vectors, store holds {}×{}",
                vectors.nrows(),
                vectors.ncols()
            )));
        }
        let config = DciConfig { m, l, budget, seed, traversal };
        config.validate().map_err(|e| DciError::CorruptFile(e.to_string()))?;
        let count = l.checked_mul(m).ok_or_else(|| DciError::CorruptFile("size overflow".into()))?;
        let mut dirs = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            dirs.push(T::lit(c.f64()?));
        }
        let directions = Array2::from_shape_vec((count, dim), dirs).expect("length checked");
        let mut sorted = Vec::with_capacity(count);
        for _ in 0..count {
            let mut s = Vec::with_capacity(n);
            for _ in 0..n {
                let v = T::lit(c.f64()?);
                let id = c.u32()?;
                if id as usize >= n {
                    return Err(DciError::CorruptFile("ordinal out of range".into()));
                }
                s.push((v, id));
            }
            sorted.push(s);
        }
        c.finish()?;
        Ok(DciIndex { config, vectors, directions, sorted })
    }

    pub fn save(&self, path: &Path) -> Result<(), DciError> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path, vectors: Array2<T>) -> Result<Self, DciError> {
        Self::read(std::fs::File::open(path)?, vectors)
    }
}

/// Total order over finite keys, for the traversal heap.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn single_point() {
        let ix = DciIndex::build(array![[1.0, 2.0]], DciConfig::default()).unwrap();
        assert!((0..20).all(|i| ix.simple_index(i).len() == 1));
        let r = ix.query(array![0.0, 0.0].view(), 1).unwrap();
        assert_eq!(r.neighbors[0].index, 0);
    }

    #[test]
    fn unit_directions_and_determinism() {
        let v = gaussian(50, 8, 1);
        let a = DciIndex::build(v.clone(), DciConfig::default()).unwrap();
        let b = DciIndex::build(v, DciConfig::default()).unwrap();
        assert_eq!(a, b);
        for row in a.directions().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn stored_vector_is_its_own_nearest() {
        let v = gaussian(200, 16, 2);
        let ix = DciIndex::build(v.clone(), DciConfig { budget: 20, ..Default::default() }).unwrap();
        for i in [0, 57, 199] {
            let r = ix.query(v.row(i), 3).unwrap();
            assert_eq!(r.neighbors[0], Neighbor { index: i, distance: 0.0 });
            assert!(r.visited <= 20);
        }
    }

    #[test]
    fn full_budget_is_exact() {
        let v = gaussian(500, 12, 3);
        for traversal in [Traversal::Prioritized, Traversal::RoundRobin] {
            let ix = DciIndex::build(v.clone(), DciConfig { traversal, ..Default::default() }).unwrap();
            let q = gaussian(20, 12, 4);
            for row in q.rows() {
                let got = ix.query_with_budget(row, 10, 500).unwrap();
                assert_eq!(got.neighbors, brute_force_knn(v.view(), row, 10));
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(DciIndex::build(Array2::<f64>::zeros((0, 3)), DciConfig::default()), Err(DciError::Empty)));
        let ix = DciIndex::build(gaussian(5, 3, 0), DciConfig::default()).unwrap();
        assert!(matches!(ix.query(array![0.0, 0.0, 0.0].view(), 6), Err(DciError::KTooLarge { k: 6, n: 5 })));
        assert!(matches!(stack_rows(&[vec![1.0], vec![1.0, 2.0]]), Err(DciError::DimensionMismatch { index: 1, .. })));
    }

    #[test]
    fn file_round_trip() {
        let v = gaussian(100, 6, 5);
        let ix = DciIndex::build(v.clone(), DciConfig { budget: 30, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        ix.write(&mut buf).unwrap();
        let back = DciIndex::read(&buf[..], v.clone()).unwrap();
        assert_eq!(back, ix);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        assert_eq!(back.query(ArrayView1::from(&q), 5).unwrap(), ix.query(ArrayView1::from(&q), 5).unwrap());
        assert!(matches!(DciIndex::read(&buf[..buf.len() - 3], v.clone()), Err(DciError::CorruptFile(_))));
        buf[8] = 9;
        assert!(matches!(DciIndex::read(&buf[..], v), Err(DciError::VersionMismatch { found: 9, .. })));
    }
}
