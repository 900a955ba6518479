//! Rank correlations between predicted frame scores and annotations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationStatus {
    Ok,
    /// A constant input leaves the coefficient undefined; the value is NaN.
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// NaN when undefined; serialized as `null`.
    #[serde(with = "nan_as_null")]
    pub value: f64,
    pub status: CorrelationStatus,
}

impl Correlation {
    fn ok(value: f64) -> Self {
        Correlation {
            value: value.clamp(-1.0, 1.0),
            status: CorrelationStatus::Ok,
        }
    }

    fn undefined() -> Self {
        Correlation {
            value: f64::NAN,
            status: CorrelationStatus::Undefined,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.status == CorrelationStatus::Ok
    }
}

pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} predictions vs {} annotations",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidInput("rank correlation needs at least 2 items".into()));
    }
    if pred.iter().chain(truth).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("rank correlation inputs contain NaN".into()));
    }
    Ok(())
}

/// Pairs tied within runs of equal keys in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort on `values`, returning the number of inversions (strictly
/// out-of-order pairs).
fn count_swaps(values: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut swaps = count_swaps(left, &mut buf[..mid]) + count_swaps(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if right[j] < left[i] {
            buf[k] = right[j];
            swaps += (left.len() - i) as u64;
            j += 1;
        } else {
            buf[k] = left[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + left.len() - i].copy_from_slice(&left[i..]);
    k += left.len() - i;
    buf[k..k + right.len() - j].copy_from_slice(&right[j..]);
    values.copy_from_slice(&buf[..n]);
    swaps
}

/// Tie-corrected Kendall τ-b in O(n log n).
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check(pred, truth)?;
    let n = pred.len() as u64;
    let n0 = n * (n - 1) / 2;
    let mut pairs: Vec<(f64, f64)> = pred.iter().copied().zip(truth.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let n3 = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = count_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);
    if n1 == n0 || n2 == n0 {
        return Ok(Correlation::undefined());
    }
    let numerator = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denom = (((n0 - n1) as u128 * (n0 - n2) as u128) as f64).sqrt();
    Ok(Correlation::ok(numerator as f64 / denom))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().copied().collect::<CompensatedSum>().value() / n;
    let my = y.iter().copied().collect::<CompensatedSum>().value() / n;
    let mut sxy = CompensatedSum::default();
    let mut sxx = CompensatedSum::default();
    let mut syy = CompensatedSum::default();
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    if sxx.value() == 0.0 || syy.value() == 0.0 {
        return Ok(Correlation::undefined());
    }
    Ok(Correlation::ok(sxy.value() / (sxx.value() * syy.value()).sqrt()))
}

/// Spearman ρ: Pearson correlation of average ranks.
pub fn spearman_rho(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check(pred, truth)?;
    pearson(&average_ranks(pred), &average_ranks(truth))
}
