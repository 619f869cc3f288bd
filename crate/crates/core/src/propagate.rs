//! Label propagation `Y ← cSY + (1−c)Z` and decoding of pseudo-labels.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{AffinityGraph, Stage};
use crate::report::ConvergenceTrace;
use crate::spans::NodePartition;

pub const DEFAULT_C: f64 = 0.99;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const DEFAULT_DENSE_LIMIT: usize = 2000;
pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Dense row-major `rows x cols` matrix of class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "label matrix shape");
        Self { rows, cols, data }
    }

    /// Seed matrix for a partition: one-hot rows for the `N` seeds, zero rows
    /// for the `M` unlabeled nodes.
    pub fn seeds<C: Copy>(partition: &NodePartition<C>, classes: usize) -> Self {
        let mut z = Self::zeros(partition.node_count(), classes);
        for (i, &(_, class)) in partition.labeled.iter().enumerate() {
            z.set(i, class, 1.0);
        }
        z
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn has_seed(&self) -> bool {
        (0..self.rows).any(|i| self.row(i).iter().any(|&v| v != 0.0))
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub y: LabelMatrix,
    pub iterations: usize,
    /// Max-norm of the last update.
    pub residual: f64,
    pub converged: bool,
    pub trace: ConvergenceTrace,
}

fn check_inputs(s: &AffinityGraph, z: &LabelMatrix, c: f64) -> Result<()> {
    if s.stage() != Stage::Normalized {
        return Err(Error::Parameter(
            "propagation needs a normalized graph".into(),
        ));
    }
    if z.rows() != s.node_count() {
        return Err(Error::Parameter(format!(
            "label matrix has {} rows for {} nodes",
            z.rows(),
            s.node_count()
        )));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Parameter(format!("c must lie in (0, 1), got {c}")));
    }
    if !z.has_seed() {
        return Err(Error::NoSeeds);
    }
    Ok(())
}

/// Iterates from `Y_0 = Z` until the max-norm update drops below `tol` or
/// `max_iters` updates have run. Hitting the cap is reported through
/// `converged = false`.
pub fn propagate_iterative(
    s: &AffinityGraph,
    z: &LabelMatrix,
    c: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Propagation> {
    check_inputs(s, z, c)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Parameter(format!("tol must be positive, got {tol}")));
    }
    let u = z.cols();
    let mut y = z.clone();
    let mut next = LabelMatrix::zeros(z.rows(), u);
    let mut trace = ConvergenceTrace::default();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        residual = next
            .data
            .par_chunks_mut(u.max(1))
            .enumerate()
            .map(|(a, out)| {
                let (cols, ws) = s.row(a);
                out.fill(0.0);
                for (&b, &w) in cols.iter().zip(ws) {
                    for (o, &v) in out.iter_mut().zip(y.row(b)) {
                        *o += w * v;
                    }
                }
                let mut delta: f64 = 0.0;
                for ((o, &zv), &yv) in out.iter_mut().zip(z.row(a)).zip(y.row(a)) {
                    *o = c * *o + (1.0 - c) * zv;
                    delta = delta.max((*o - yv).abs());
                }
                delta
            })
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut y, &mut next);
        iterations += 1;
        trace.push(iterations, residual);
        if residual < tol {
            break;
        }
    }
    Ok(Propagation {
        y,
        iterations,
        residual,
        converged: residual < tol,
        trace,
    })
}

/// Fixed point `(1−c)(I − cS)⁻¹ Z` by dense LU solve, for graphs of at most
/// `dense_limit` nodes.
pub fn propagate_closed_form(
    s: &AffinityGraph,
    z: &LabelMatrix,
    c: f64,
    dense_limit: usize,
) -> Result<LabelMatrix> {
    let t = s.node_count();
    if t > dense_limit {
        return Err(Error::DenseLimit {
            nodes: t,
            limit: dense_limit,
        });
    }
    check_inputs(s, z, c)?;
    let mut system = DMatrix::<f64>::identity(t, t);
    for (a, b, w) in s.edges() {
        system[(a, b)] -= c * w;
    }
    let rhs = DMatrix::from_row_slice(t, z.cols(), z.as_slice());
    let solved = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Parameter("I - cS is singular".into()))?;
    let mut y = LabelMatrix::zeros(t, z.cols());
    for i in 0..t {
        for j in 0..z.cols() {
            y.set(i, j, (1.0 - c) * solved[(i, j)]);
        }
    }
    Ok(y)
}

/// Confidence cut-off for emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Emit when the softmax confidence is at least this value.
    Fixed(f64),
    /// Cut-off is this quantile of the confidences of all non-abstaining
    /// unlabeled nodes (lower nearest rank); `Quantile(0.0)` emits them all.
    Quantile(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fixed(DEFAULT_THRESHOLD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel<C> {
    pub node: C,
    pub class: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<C> {
    pub labels: Vec<PseudoLabel<C>>,
    /// Unlabeled nodes whose score row is all zero.
    pub zero_rows: usize,
    /// Unlabeled nodes with evidence but confidence below the cut-off.
    pub below_threshold: usize,
    /// Cut-off actually applied.
    pub threshold: f64,
}

impl<C> Decoded<C> {
    pub fn abstained(&self) -> usize {
        self.zero_rows + self.below_threshold
    }
}

/// Argmax and max-probability of `softmax(row)`; `None` for an all-zero row.
pub fn softmax_confidence(row: &[f64]) -> Option<(usize, f64)> {
    if row.iter().all(|&v| v == 0.0) {
        return None;
    }
    let (class, max) =
        row.iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
    let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    Some((class, 1.0 / denom))
}

/// Pseudo-labels for the unlabeled nodes of `partition` (rows `N..`).
/// Seed rows are never re-emitted.
pub fn decode<C: Copy>(
    y: &LabelMatrix,
    partition: &NodePartition<C>,
    threshold: Threshold,
) -> Decoded<C> {
    let offset = partition.labeled_count();
    let scored: Vec<Option<(usize, f64)>> = (0..partition.unlabeled_count())
        .map(|j| softmax_confidence(y.row(offset + j)))
        .collect();
    let cutoff = match threshold {
        Threshold::Fixed(g) => g,
        Threshold::Quantile(q) => {
            let mut confs: Vec<f64> = scored.iter().flatten().map(|&(_, p)| p).collect();
            confs.sort_by(f64::total_cmp);
            if confs.is_empty() {
                1.0
            } else {
                let q = q.clamp(0.0, 1.0);
                confs[(q * (confs.len() - 1) as f64).floor() as usize]
            }
        }
    };
    let mut decoded = Decoded {
        labels: Vec::new(),
        zero_rows: 0,
        below_threshold: 0,
        threshold: cutoff,
    };
    for (node, score) in partition.unlabeled.iter().zip(scored) {
        match score {
            None => decoded.zero_rows += 1,
            Some((class, confidence)) if confidence >= cutoff => decoded.labels.push(PseudoLabel {
                node: *node,
                class,
                confidence,
            }),
            Some(_) => decoded.below_threshold += 1,
        }
    }
    decoded
}
