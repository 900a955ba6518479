//! Penalized change-point detection over frame-embedding sequences.
//!
//! The objective is the sum over segments of the within-segment sum of
//! squared deviations from the segment mean, plus a fixed penalty per change
//! point. [`pelt`] minimizes it exactly with candidate pruning;
//! [`brute_force_segment`] is the unpruned O(n²) dynamic program kept as an
//! oracle.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::util::CompensatedSum;

pub const ORACLE_LIMIT: usize = 200;

/// An ordered sequence of equal-dimension points.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl Signal {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("signal needs at least one point".into()))?;
        if dim == 0 {
            return Err(Error::InvalidInput("signal points have zero dimensions".into()));
        }
        if let Some(i) = points.iter().position(|p| p.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "point {i} has {} dims, expected {dim}",
                points[i].len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signal contains non-finite values".into()));
        }
        Ok(Signal { points, dim })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Signal::new(values.iter().map(|v| vec![*v]).collect())
    }

    pub fn from_embeddings(vectors: &[EmbeddingVector]) -> Result<Self> {
        Signal::new(
            vectors
                .iter()
                .map(|v| v.values().iter().map(|x| f64::from(*x)).collect())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointSet {
    /// Strictly increasing, each in `(0, n)`.
    pub indices: Vec<usize>,
    pub penalty: f64,
    pub cost_total: f64,
}

impl ChangePointSet {
    /// Half-open `[start, end)` segments covering `0..n`.
    pub fn segments(&self, n: usize) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.indices.len() + 2);
        bounds.push(0);
        bounds.extend(self.indices.iter().copied());
        bounds.push(n);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Index of the segment containing position `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        self.indices.partition_point(|&t| t <= i)
    }
}

/// Within-segment sum of squared L2 deviations from the mean over `[start, end)`.
pub fn segment_cost(signal: &Signal, start: usize, end: usize) -> Result<f64> {
    if start >= end || end > signal.len() {
        return Err(Error::InvalidRange {
            start,
            end,
            len: signal.len(),
        });
    }
    let seg = &signal.points[start..end];
    let len = seg.len() as f64;
    let mut total = CompensatedSum::default();
    for d in 0..signal.dim {
        let mean = seg.iter().map(|p| p[d]).collect::<CompensatedSum>().value() / len;
        for p in seg {
            let dev = p[d] - mean;
            total.add(dev * dev);
        }
    }
    Ok(total.value().max(0.0))
}

/// Prefix-sum tables for O(dim) segment costs. Columns are centered on their
/// global mean first to limit cancellation.
struct CostTable {
    dim: usize,
    sums: Vec<f64>,
    sq: Vec<f64>,
}

impl CostTable {
    fn new(signal: &Signal) -> Self {
        let n = signal.len();
        let dim = signal.dim;
        let means: Vec<f64> = (0..dim)
            .map(|d| {
                signal.points.iter().map(|p| p[d]).collect::<CompensatedSum>().value() / n as f64
            })
            .collect();
        let mut sums = vec![0.0; (n + 1) * dim];
        let mut sq = vec![0.0; n + 1];
        let mut col_acc = vec![CompensatedSum::default(); dim];
        let mut sq_acc = CompensatedSum::default();
        for (t, p) in signal.points.iter().enumerate() {
            for d in 0..dim {
                let x = p[d] - means[d];
                col_acc[d].add(x);
                sq_acc.add(x * x);
                sums[(t + 1) * dim + d] = col_acc[d].value();
            }
            sq[t + 1] = sq_acc.value();
        }
        CostTable { dim, sums, sq }
    }

    fn cost(&self, start: usize, end: usize) -> f64 {
        let len = (end - start) as f64;
        let a = &self.sums[start * self.dim..(start + 1) * self.dim];
        let b = &self.sums[end * self.dim..(end + 1) * self.dim];
        let mean_part: f64 = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>() / len;
        ((self.sq[end] - self.sq[start]) - mean_part).max(0.0)
    }
}

fn check_penalty(penalty: f64) -> Result<()> {
    if penalty.is_finite() && penalty > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPenalty(penalty))
    }
}

fn backtrack(last: &[usize], n: usize) -> Vec<usize> {
    let mut indices = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = last[t];
        if s > 0 {
            indices.push(s);
        }
        t = s;
    }
    indices.reverse();
    indices
}

fn finish(signal: &Signal, indices: Vec<usize>, penalty: f64) -> Result<ChangePointSet> {
    let set = ChangePointSet {
        indices,
        penalty,
        cost_total: 0.0,
    };
    let mut total = CompensatedSum::default();
    for (a, b) in set.segments(signal.len()) {
        total.add(segment_cost(signal, a, b)?);
    }
    total.add(penalty * set.indices.len() as f64);
    Ok(ChangePointSet {
        cost_total: total.value(),
        ..set
    })
}

/// Exact penalized segmentation with pruning of dominated candidates.
pub fn pelt(signal: &Signal, penalty: f64) -> Result<ChangePointSet> {
    check_penalty(penalty)?;
    let n = signal.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("pelt needs at least 2 points, got {n}")));
    }
    let table = CostTable::new(signal);
    let mut best = vec![0.0; n + 1];
    let mut last = vec![0usize; n + 1];
    best[0] = -penalty;
    let mut candidates: Vec<usize> = vec![0];
    let mut scratch: Vec<f64> = Vec::with_capacity(n);
    for t in 1..=n {
        scratch.clear();
        let mut min_val = f64::INFINITY;
        let mut argmin = 0;
        for &s in &candidates {
            let partial = best[s] + table.cost(s, t);
            scratch.push(partial);
            let val = partial + penalty;
            if val < min_val {
                min_val = val;
                argmin = s;
            }
        }
        best[t] = min_val;
        last[t] = argmin;
        // s can never beat t later once F(s) + C(s, t) > F(t); the slack keeps
        // rounding from discarding a candidate that ties in exact arithmetic.
        let slack = 1e-9 * (1.0 + min_val.abs());
        let mut kept = Vec::with_capacity(candidates.len() + 1);
        for (&s, &partial) in candidates.iter().zip(&scratch) {
            if partial <= min_val + slack {
                kept.push(s);
            }
        }
        kept.push(t);
        candidates = kept;
    }
    finish(signal, backtrack(&last, n), penalty)
}

/// Unpruned O(n²) dynamic program over all last-change positions.
pub fn brute_force_segment(signal: &Signal, penalty: f64) -> Result<ChangePointSet> {
    check_penalty(penalty)?;
    let n = signal.len();
    if n > ORACLE_LIMIT {
        return Err(Error::OracleLimit {
            n,
            limit: ORACLE_LIMIT,
        });
    }
    let table = CostTable::new(signal);
    let mut best = vec![0.0; n + 1];
    let mut last = vec![0usize; n + 1];
    best[0] = -penalty;
    for t in 1..=n {
        let mut min_val = f64::INFINITY;
        let mut argmin = 0;
        for (s, &prev) in best[..t].iter().enumerate() {
            let val = prev + table.cost(s, t) + penalty;
            if val < min_val {
                min_val = val;
                argmin = s;
            }
        }
        best[t] = min_val;
        last[t] = argmin;
    }
    finish(signal, backtrack(&last, n), penalty)
}

/// Data-scaled default penalty: `sigma² · dim · ln(n)`, where `sigma²` is the
/// median over dimensions of the variance of first differences. Falls back to
/// 1.0 when the signal has no variation at all.
pub fn default_penalty(signal: &Signal) -> f64 {
    let n = signal.len();
    if n < 3 {
        return 1.0;
    }
    let variances: Vec<f64> = (0..signal.dim)
        .map(|d| {
            let diffs: Vec<f64> = signal.points.windows(2).map(|w| w[1][d] - w[0][d]).collect();
            let m = diffs.len() as f64;
            let mean = diffs.iter().copied().collect::<CompensatedSum>().value() / m;
            diffs.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value() / m
        })
        .collect();
    let sigma2 = crate::util::median(&variances);
    let beta = sigma2 * signal.dim as f64 * (n as f64).ln();
    if beta.is_finite() && beta > 0.0 {
        beta
    } else {
        1.0
    }
}
