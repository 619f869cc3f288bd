//! Run reports and convergence diagnostics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(iteration, residual)` pairs of one propagation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub points: Vec<(usize, f64)>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, iteration: usize, residual: f64) {
        self.points.push((iteration, residual));
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,residual\n");
        for (it, r) in &self.points {
            out.push_str(&format!("{it},{r:e}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    /// Rate within 1e-9 of 1 or above.
    pub non_contracting: bool,
}

/// Geometric decay rate `exp(slope)` of the least-squares line through
/// `(iteration, ln residual)`. Zero residuals carry no slope information and
/// are skipped; at least five positive points are required.
pub fn estimate_rate(trace: &ConvergenceTrace) -> Result<RateEstimate> {
    let pts: Vec<(f64, f64)> = trace
        .points
        .iter()
        .filter(|(_, r)| *r > 0.0 && r.is_finite())
        .map(|&(t, r)| (t as f64, r.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::TraceTooShort(pts.len()));
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, l) in &pts {
        sxy += (t - mean_t) * (l - mean_l);
        sxx += (t - mean_t) * (t - mean_t);
    }
    let rate = (sxy / sxx).exp();
    Ok(RateEstimate {
        rate,
        non_contracting: rate >= 1.0 - 1e-9,
    })
}

/// Micro precision, recall and F1. Precision is reported as 0 when nothing
/// was predicted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(predicted: usize, gold: usize, correct: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            predicted,
            gold,
            correct,
            precision,
            recall,
            f1,
        }
    }
}

/// Outcome of one task (entity or relation) within one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    /// `ok`, `skipped: no seeds` or `skipped: no candidates`.
    pub status: String,
    /// Candidates generated for the task this round, seeds included.
    pub candidates: usize,
    /// N
    pub labeled_nodes: usize,
    /// M
    pub unlabeled_nodes: usize,
    pub edges: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub rate: Option<f64>,
    pub threshold: f64,
    pub emitted: usize,
    pub abstained: usize,
    pub zero_rows: usize,
    pub below_threshold: usize,
    /// Emissions not already present from an earlier round.
    pub new_labels: usize,
    pub truncated_pairs: bool,
}

impl TaskReport {
    pub fn skipped(reason: &str) -> Self {
        Self {
            status: format!("skipped: {reason}"),
            ..Self::default()
        }
    }

    pub fn is_skipped(&self) -> bool {
        self.status.starts_with("skipped")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub entity: TaskReport,
    pub relation: TaskReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub entity_labels: usize,
    pub relation_labels: usize,
    /// Relation labels left out of the augmented corpus because an endpoint
    /// carried no entity label.
    pub relation_unanchored: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub entity: Prf,
    pub relation: Prf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sentences: usize,
    pub labeled_sentences: usize,
    pub rounds: Vec<RoundReport>,
    pub totals: Totals,
    pub dropped_gold: Vec<String>,
    pub evaluation: Option<Evaluation>,
    /// Wall-clock milliseconds per stage, e.g. `round1.entity.graph`.
    pub timings: BTreeMap<String, f64>,
}

/// Pretty JSON with keys in sorted order.
pub fn render_report(report: &RunReport) -> Vec<u8> {
    let value = serde_json::to_value(report).expect("report serializes");
    let mut out = serde_json::to_vec_pretty(&value).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn parse_report(bytes: &[u8]) -> Result<RunReport> {
    serde_json::from_slice(bytes).map_err(|source| Error::Json { line: 0, source })
}
