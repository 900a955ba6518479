//! Lexical overlap metrics over tokenized summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases, drops punctuation, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Longest common subsequence length, bit-parallel over the candidate.
pub fn lcs_len<T: Eq + std::hash::Hash>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let words = a.len().div_ceil(64);
    let mut masks: HashMap<&T, Vec<u64>> = HashMap::new();
    for (i, tok) in a.iter().enumerate() {
        masks.entry(tok).or_insert_with(|| vec![0; words])[i / 64] |= 1u64 << (i % 64);
    }
    let mut v = vec![u64::MAX; words];
    for tok in b {
        let Some(m) = masks.get(tok) else { continue };
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & m[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = u64::from(c1 || c2);
            v[w] = s2 | (v[w] & !u);
        }
    }
    let mut zeros = 0;
    for (w, word) in v.iter().enumerate() {
        let bits = (a.len() - w * 64).min(64);
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        zeros += (!word & mask).count_ones() as usize;
    }
    zeros
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeScore {
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    RougeScore {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleuConfig {
    pub max_n: usize,
    /// Add one to numerator and denominator of an order with no matches.
    pub smoothing: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: true,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with clipped n-gram precisions and brevity penalty. Orders
/// longer than the candidate are left out of the mean. Smoothing only touches
/// orders above 1, so a candidate sharing no word with any reference scores 0.
pub fn bleu(candidate: &[String], references: &[Vec<String>], config: &BleuConfig) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::InvalidInput("bleu needs at least one reference".into()));
    }
    if config.max_n == 0 {
        return Err(Error::InvalidInput("bleu max_n must be positive".into()));
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let orders = config.max_n.min(c);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, k) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matches: usize = cand
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = c + 1 - n;
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if config.smoothing && n > 1 {
            1.0 / (total as f64 + 1.0)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln();
    }
    let r = closest_ref_len(c, references);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / orders as f64).exp())
}

/// Reference length closest to `c`; ties go to the shorter one.
pub fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenization() {
        assert_eq!(t("The Cat, sat!  on\tthe mat."), vec!["the", "cat", "sat", "on", "the", "mat"]);
        assert_eq!(t("don't"), vec!["dont"]);
        assert!(t("  ... ").is_empty());
    }

    #[test]
    fn rouge_cases() {
        let r = rouge_l(&t("a b c d"), &t("a c d"));
        assert_eq!((r.precision, r.recall), (0.75, 1.0));
        assert!((r.f1 - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(rouge_l(&t("x y"), &t("x y")).f1, 1.0);
        assert_eq!(rouge_l(&t("x y"), &t("p q")).f1, 0.0);
        assert_eq!(rouge_l(&[], &t("p q")).f1, 0.0);
    }

    #[test]
    fn lcs_across_word_boundaries() {
        let a: Vec<u32> = (0..200).map(|i| i % 7).collect();
        let b: Vec<u32> = (0..150).map(|i| (i * 3) % 7).collect();
        let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                dp[i][j] = if a[i - 1] == b[j - 1] {
                    dp[i - 1][j - 1] + 1
                } else {
                    dp[i - 1][j].max(dp[i][j - 1])
                };
            }
        }
        assert_eq!(lcs_len(&a, &b), dp[a.len()][b.len()]);
    }

    #[test]
    fn bleu_cases() {
        let cfg = BleuConfig::default();
        let s = t("the quick brown fox jumps over the lazy dog");
        assert!((bleu(&s, std::slice::from_ref(&s), &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&[], std::slice::from_ref(&s), &cfg).unwrap(), 0.0);
        let v = bleu(&t("the cat"), &[t("the cat sat")], &cfg).unwrap();
        assert!((v - (1.0f64 - 1.5).exp()).abs() < 1e-12);
        assert!((v - 0.6065306597).abs() < 1e-9);
        assert!(bleu(&s, &[], &cfg).is_err());
        let off = BleuConfig {
            smoothing: false,
            ..cfg
        };
        assert_eq!(bleu(&t("a b c d"), &[t("a c b d")], &off).unwrap(), 0.0);
        assert!(bleu(&t("a b c d"), &[t("a c b d")], &cfg).unwrap() > 0.0);
        assert_eq!(bleu(&t("x y"), &[t("p q")], &off).unwrap(), 0.0);
        assert_eq!(bleu(&t("x y"), &[t("p q")], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn closest_reference() {
        let refs = vec![t("a b"), t("a b c d"), t("a b c d e f")];
        assert_eq!(closest_ref_len(3, &refs), 2);
        assert_eq!(closest_ref_len(5, &refs), 4);
        assert_eq!(closest_ref_len(6, &refs), 6);
    }
}
