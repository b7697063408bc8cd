//! ROUGE-N and ROUGE-L on raw token sequences (no stemming, no stopwords).

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    #[serde(rename = "r")]
    pub recall: f64,
    #[serde(rename = "p")]
    pub precision: f64,
    pub f1: f64,
}

impl RougeScore {
    /// `hits` matched units out of `cand_len` candidate and `ref_len` reference units.
    pub fn from_counts(hits: usize, cand_len: usize, ref_len: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let recall = ratio(hits, ref_len);
        let precision = ratio(hits, cand_len);
        let f1 = if recall + precision > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            recall,
            precision,
            f1,
        }
    }

    /// Elementwise mean; all zeros for an empty slice. Values are summed in
    /// sorted order, so the result does not depend on the input order.
    pub fn mean(scores: &[RougeScore]) -> Self {
        if scores.is_empty() {
            return RougeScore::default();
        }
        let avg = |f: fn(&RougeScore) -> f64| {
            let mut xs: Vec<f64> = scores.iter().map(f).collect();
            xs.sort_by(f64::total_cmp);
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        RougeScore {
            recall: avg(|s| s.recall),
            precision: avg(|s| s.precision),
            f1: avg(|s| s.f1),
        }
    }
}

fn ngram_counts<T: Eq + Hash>(xs: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && xs.len() >= n {
        for w in xs.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let hits = cand
        .iter()
        .map(|(g, c)| refs.get(g).map_or(0, |r| (*c).min(*r)))
        .sum();
    let total = |m: &HashMap<&[T], usize>| m.values().sum::<usize>();
    RougeScore::from_counts(hits, total(&cand), total(&refs))
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence overlap with the balanced F1.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}
