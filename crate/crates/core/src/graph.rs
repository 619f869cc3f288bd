//! Sparse kNN affinity graphs: Gaussian kernel weights, `O = A + Aᵀ` and the
//! symmetric normalization `S = H^-1/2 O H^-1/2`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_SIGMA: f64 = 2.0;

const QUERY_BLOCK: usize = 64;
const CANDIDATE_BLOCK: usize = 512;

/// Row-major node features, one row per graph node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(
            dim > 0 && data.len().is_multiple_of(dim),
            "ragged feature matrix"
        );
        Self { dim, data }
    }

    /// Panics when rows differ in length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(1, |r| r.as_ref().len().max(1));
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.as_ref().len(), dim, "feature rows differ in length");
            data.extend_from_slice(r.as_ref());
        }
        Self { dim, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-d² / 2σ²)`, floored at the smallest positive normal so that far
/// neighbours keep a nonzero edge.
pub fn gaussian_weight(squared_distance: f64, sigma: f64) -> f64 {
    (-squared_distance / (2.0 * sigma * sigma))
        .exp()
        .max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Directed kNN kernel weights.
    Raw,
    /// `A + Aᵀ`.
    Symmetrized,
    /// `H^-1/2 O H^-1/2`.
    Normalized,
}

/// Compressed sparse rows; column indices ascend within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    stage: Stage,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl AffinityGraph {
    /// Builds a graph from per-row `(column, weight)` lists, sorting each row.
    pub fn from_rows(stage: Stage, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, w) in row {
                indices.push(c);
                weights.push(w);
            }
            indptr.push(indices.len());
        }
        Self {
            stage,
            indptr,
            indices,
            weights,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn node_count(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, a: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[a]..self.indptr[a + 1];
        (&self.indices[r.clone()], &self.weights[r])
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        let (cols, ws) = self.row(a);
        cols.binary_search(&b).map_or(0.0, |i| ws[i])
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.node_count()).flat_map(move |a| {
            let (cols, ws) = self.row(a);
            cols.iter().zip(ws).map(move |(&b, &w)| (a, b, w))
        })
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let t = self.node_count();
        let mut out = vec![0.0; t * t];
        for (a, b, w) in self.edges() {
            out[a * t + b] = w;
        }
        out
    }

    /// Writes one `{"node":a,"neighbor":b,"weight":w}` line per stored entry,
    /// weights with 17 significant digits.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (a, b, w) in self.edges() {
            out.push_str(&format!(
                "{{\"node\":{a},\"neighbor\":{b},\"weight\":{w:.16e}}}\n"
            ));
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy)]
struct Neighbor {
    dist: f64,
    index: usize,
}

impl PartialEq for Neighbor {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

/// Exact k nearest neighbours of every row by Euclidean distance, ties going
/// to the lower index. Each list comes back sorted by node index together with
/// the squared distance.
pub fn knn_lists(features: &FeatureMatrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    let t = features.rows();
    let k = k.min(t.saturating_sub(1));
    let queries: Vec<usize> = (0..t).collect();
    queries
        .par_chunks(QUERY_BLOCK)
        .flat_map_iter(|chunk| {
            let mut heaps: Vec<BinaryHeap<Neighbor>> = chunk
                .iter()
                .map(|_| BinaryHeap::with_capacity(k + 1))
                .collect();
            for block_start in (0..t).step_by(CANDIDATE_BLOCK) {
                let block = block_start..(block_start + CANDIDATE_BLOCK).min(t);
                for (heap, &a) in heaps.iter_mut().zip(chunk) {
                    let ha = features.row(a);
                    for b in block.clone() {
                        if b == a || k == 0 {
                            continue;
                        }
                        let cand = Neighbor {
                            dist: squared_distance(ha, features.row(b)),
                            index: b,
                        };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if cand < *heap.peek().expect("heap is full") {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            heaps.into_iter().map(|heap| {
                let mut row: Vec<(usize, f64)> =
                    heap.into_iter().map(|n| (n.index, n.dist)).collect();
                row.sort_by_key(|&(i, _)| i);
                row
            })
        })
        .collect()
}

/// Directed kNN graph with Gaussian weights. `k` is clamped to `T - 1`.
pub fn knn_affinity(features: &FeatureMatrix, k: usize, sigma: f64) -> Result<AffinityGraph> {
    let t = features.rows();
    if t < 2 {
        return Err(Error::TooFewNodes);
    }
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if let Some(pos) = features.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node: pos / features.dim,
        });
    }
    let rows = knn_lists(features, k)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(b, d2)| (b, gaussian_weight(d2, sigma)))
                .collect()
        })
        .collect();
    Ok(AffinityGraph::from_rows(Stage::Raw, rows))
}

/// `O = A + Aᵀ`; mutual edges add up.
pub fn symmetrize(graph: &AffinityGraph) -> AffinityGraph {
    let t = graph.node_count();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..t)
        .map(|a| {
            let (cols, ws) = graph.row(a);
            cols.iter().copied().zip(ws.iter().copied()).collect()
        })
        .collect();
    for (a, b, w) in graph.edges() {
        rows[b].push((a, w));
    }
    let merged = rows
        .into_par_iter()
        .map(|mut row| {
            // stable: the forward entry precedes the transposed one
            row.sort_by_key(|&(c, _)| c);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, w) in row {
                match out.last_mut() {
                    Some(last) if last.0 == c => last.1 += w,
                    _ => out.push((c, w)),
                }
            }
            out
        })
        .collect();
    AffinityGraph::from_rows(Stage::Symmetrized, merged)
}

/// `S = H^-1/2 O H^-1/2` with `H = diag(row sums of O)`.
pub fn normalize(graph: &AffinityGraph) -> Result<AffinityGraph> {
    let t = graph.node_count();
    let degree: Vec<f64> = (0..t).map(|a| graph.row(a).1.iter().sum()).collect();
    if let Some(node) = degree.iter().position(|&h| h.is_nan() || h <= 0.0) {
        return Err(Error::IsolatedNode { node });
    }
    let rows = (0..t)
        .into_par_iter()
        .map(|a| {
            let (cols, ws) = graph.row(a);
            cols.iter()
                .zip(ws)
                .map(|(&b, &w)| (b, w / (degree[a] * degree[b]).sqrt()))
                .collect()
        })
        .collect();
    Ok(AffinityGraph::from_rows(Stage::Normalized, rows))
}

/// kNN affinity, symmetrization and normalization in one call.
pub fn build_normalized(features: &FeatureMatrix, k: usize, sigma: f64) -> Result<AffinityGraph> {
    normalize(&symmetrize(&knn_affinity(features, k, sigma)?))
}
