//! Brute-force reference implementations for auditing small runs.
//!
//! Everything here is dense, single-threaded and shares no code path with the
//! sparse graph builder or the iterative solver.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;

pub const ORACLE_LIMIT: usize = 2000;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, f: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * f).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.get(i, j);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.data
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn guard(n: usize) -> Result<()> {
    if n > ORACLE_LIMIT {
        Err(Error::DenseLimit {
            nodes: n,
            limit: ORACLE_LIMIT,
        })
    } else {
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

/// Fully connected Gaussian kernel with zero diagonal.
pub fn dense_affinity(features: &FeatureMatrix, sigma: f64) -> Result<DenseMatrix> {
    let t = features.rows();
    guard(t)?;
    let mut m = DenseMatrix::zeros(t, t);
    for a in 0..t {
        for b in 0..t {
            if a != b {
                let d2 = sq_dist(features.row(a), features.row(b));
                m.data[a * t + b] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    Ok(m)
}

/// k nearest neighbours of every node by full sort, ties to the lower index.
/// Lists are sorted by node index.
pub fn knn_reference(features: &FeatureMatrix, k: usize) -> Vec<Vec<usize>> {
    let t = features.rows();
    (0..t)
        .map(|a| {
            let mut others: Vec<(f64, usize)> = (0..t)
                .filter(|&b| b != a)
                .map(|b| (sq_dist(features.row(a), features.row(b)), b))
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let mut nn: Vec<usize> = others.into_iter().take(k).map(|(_, b)| b).collect();
            nn.sort_unstable();
            nn
        })
        .collect()
}

/// Dense kNN kernel matrix: full kernel masked to each row's neighbours.
pub fn dense_knn_affinity(features: &FeatureMatrix, k: usize, sigma: f64) -> Result<DenseMatrix> {
    let full = dense_affinity(features, sigma)?;
    let t = features.rows();
    let mut m = DenseMatrix::zeros(t, t);
    for (a, nn) in knn_reference(features, k).into_iter().enumerate() {
        for b in nn {
            m.data[a * t + b] = full.get(a, b);
        }
    }
    Ok(m)
}

/// `D O D` with `D = diag(1/sqrt(row sums))` of `O = A + Aᵀ`.
pub fn dense_normalized(a: &DenseMatrix) -> DenseMatrix {
    let o = a.add(&a.transpose());
    let t = o.rows;
    let mut d = DenseMatrix::zeros(t, t);
    for i in 0..t {
        let h: f64 = (0..t).map(|j| o.get(i, j)).sum();
        d.data[i * t + i] = 1.0 / h.sqrt();
    }
    d.matmul(&o).matmul(&d)
}

/// Eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let dm = DMatrix::from_row_slice(m.rows, m.cols, &m.data);
    SymmetricEigen::new(dm)
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

/// Partial sum `Y_t = (cS)^(t-1) Z + (1−c) Σ_{i=0}^{t-2} (cS)^i Z` with
/// `Y_1 = Z`. Powers and the geometric sum are built by binary doubling, so
/// `t` in the thousands stays cheap.
pub fn propagate_reference(
    s: &DenseMatrix,
    z: &DenseMatrix,
    c: f64,
    t: usize,
) -> Result<DenseMatrix> {
    guard(s.rows)?;
    if t == 0 {
        return Err(Error::Parameter("series needs at least one term".into()));
    }
    let n = s.rows;
    let a = s.scale(c);
    let steps = t - 1;
    // power = A^m, sum = Σ_{i<m} A^i, walking the bits of `steps` from the top
    let mut power = DenseMatrix::identity(n);
    let mut sum = DenseMatrix::zeros(n, n);
    for bit in (0..usize::BITS - steps.leading_zeros()).rev() {
        sum = sum.add(&power.matmul(&sum));
        power = power.matmul(&power);
        if steps >> bit & 1 == 1 {
            sum = sum.add(&power);
            power = a.matmul(&power);
        }
    }
    Ok(power.matmul(z).add(&sum.matmul(z).scale(1.0 - c)))
}
