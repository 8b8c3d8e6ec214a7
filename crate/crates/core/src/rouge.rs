//! ROUGE-1, ROUGE-2 and whole-sequence ROUGE-L.
//!
//! ROUGE-L uses one longest common subsequence over the full token sequences;
//! there is no sentence segmentation.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        if candidate_total == 0 || reference_total == 0 {
            return RougeScore::default();
        }
        let precision = overlap as f64 / candidate_total as f64;
        let recall = overlap as f64 / reference_total as f64;
        RougeScore {
            precision,
            recall,
            f_measure: f_measure(precision, recall),
        }
    }
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Scores for the three reported variants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap score for `n >= 1`.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        overlap,
        candidate.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// Length of the longest common subsequence, `O(|a|·|b|)` time and
/// `O(min)` memory.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn score<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> RougeTriple {
    RougeTriple {
        rouge1: rouge_n(candidate, reference, 1),
        rouge2: rouge_n(candidate, reference, 2),
        rouge_l: rouge_l(candidate, reference),
    }
}

/// Scores raw strings after [`tokenize`].
pub fn score_text(candidate: &str, reference: &str) -> RougeTriple {
    score(&tokenize(candidate), &tokenize(reference))
}

/// Arithmetic mean of per-pair precision, recall and F over `pairs`.
pub fn corpus_rouge<T, C, R>(pairs: &[(C, R)]) -> Result<RougeTriple>
where
    T: Eq + Hash,
    C: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if pairs.is_empty() {
        return Err(Error::validation("corpus ROUGE needs at least one pair"));
    }
    let scores: Vec<RougeTriple> = pairs
        .iter()
        .map(|(c, r)| score(c.as_ref(), r.as_ref()))
        .collect();
    Ok(mean(&scores))
}

pub fn mean(scores: &[RougeTriple]) -> RougeTriple {
    let n = scores.len() as f64;
    let avg = |f: fn(&RougeTriple) -> RougeScore| {
        let (mut p, mut r, mut fm) = (0.0, 0.0, 0.0);
        for s in scores {
            let v = f(s);
            p += v.precision;
            r += v.recall;
            fm += v.f_measure;
        }
        RougeScore {
            precision: p / n,
            recall: r / n,
            f_measure: fm / n,
        }
    };
    RougeTriple {
        rouge1: avg(|s| s.rouge1),
        rouge2: avg(|s| s.rouge2),
        rouge_l: avg(|s| s.rouge_l),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_perfect() {
        let a = w("the quick brown fox");
        let s = score(&a, &a);
        for v in [s.rouge1, s.rouge2, s.rouge_l] {
            assert_eq!((v.precision, v.recall, v.f_measure), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn hand_example() {
        let s = score(&w("the cat"), &w("the cat sat"));
        assert_eq!(s.rouge1.precision, 1.0);
        assert!((s.rouge1.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.rouge1.f_measure - 0.8).abs() < 1e-15);
        assert_eq!(s.rouge2.precision, 1.0);
        assert_eq!(s.rouge2.recall, 0.5);
        assert!((s.rouge2.f_measure - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(lcs_len(&w("the cat"), &w("the cat sat")), 2);
        assert!((s.rouge_l.f_measure - 0.8).abs() < 1e-15);
    }

    #[test]
    fn disjoint_and_empty() {
        let s = score(&w("a b"), &w("c d"));
        assert_eq!(s, RougeTriple::default());
        assert_eq!(score(&w(""), &w("a")), RougeTriple::default());
        // single token: no bigrams on the candidate side
        assert_eq!(rouge_n(&w("a"), &w("a b"), 2), RougeScore::default());
    }

    #[test]
    fn clipped_counts() {
        let s = rouge_n(&w("a a a"), &w("a b"), 1);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn text_tokenization() {
        assert_eq!(tokenize("The cat-sat, OK?"), ["the", "cat", "sat", "ok"]);
        assert_eq!(score_text("The cat.", "the cat sat").rouge1.precision, 1.0);
    }

    #[test]
    fn corpus_mean() {
        let pairs = vec![(w("a b"), w("a b"))];
        assert_eq!(corpus_rouge(&pairs).unwrap(), score(&w("a b"), &w("a b")));
        let pairs = vec![(w("a"), w("a")), (w("a"), w("b"))];
        assert_eq!(corpus_rouge(&pairs).unwrap().rouge1.f_measure, 0.5);
        let empty: Vec<(Vec<&str>, Vec<&str>)> = vec![];
        assert!(corpus_rouge(&empty).is_err());
    }

    proptest! {
        #[test]
        fn precision_recall_swap(a in proptest::collection::vec(0u8..4, 0..10),
                                 b in proptest::collection::vec(0u8..4, 0..10)) {
            for n in 1..=2 {
                let ab = rouge_n(&a, &b, n);
                let ba = rouge_n(&b, &a, n);
                prop_assert_eq!(ab.precision, ba.recall);
                prop_assert_eq!(ab.f_measure, ba.f_measure);
            }
            let s = score(&a, &b);
            for v in [s.rouge1, s.rouge2, s.rouge_l] {
                prop_assert!((0.0..=1.0).contains(&v.f_measure));
            }
        }

        #[test]
        fn order_invariant_mean(pairs in proptest::collection::vec(
            (proptest::collection::vec(0u8..3, 1..6), proptest::collection::vec(0u8..3, 1..6)), 1..8)) {
            let fwd = corpus_rouge(&pairs).unwrap();
            let mut rev = pairs.clone();
            rev.reverse();
            let bwd = corpus_rouge(&rev).unwrap();
            prop_assert!((fwd.rouge_l.f_measure - bwd.rouge_l.f_measure).abs() < 1e-12);
            prop_assert!((fwd.rouge1.f_measure - bwd.rouge1.f_measure).abs() < 1e-12);
        }
    }
}
