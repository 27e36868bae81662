use std::collections::HashMap;

use super::EvalInstance;
use crate::error::{Error, Result};

/// ROUGE-L recall weight used by captioning toolkits.
pub const ROUGE_BETA: f64 = 1.2;

pub(crate) fn tokens(s: &str) -> Vec<&str> {
    s.split(' ').filter(|w| !w.is_empty()).collect()
}

fn counts<'a>(words: &[&'a str]) -> HashMap<&'a str, usize> {
    let mut map = HashMap::new();
    for w in words {
        *map.entry(*w).or_insert(0) += 1;
    }
    map
}

/// Unigram statistics of one instance: clipped matches, candidate length and
/// the closest reference length (shorter one on ties).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UnigramStats {
    pub clipped: usize,
    pub candidate_len: usize,
    pub reference_len: usize,
}

pub fn unigram_stats(instance: &EvalInstance) -> UnigramStats {
    let cand = tokens(&instance.candidate);
    let refs: Vec<Vec<&str>> = instance.references.iter().map(|r| tokens(r)).collect();
    let mut max_ref: HashMap<&str, usize> = HashMap::new();
    for r in &refs {
        for (w, n) in counts(r) {
            let slot = max_ref.entry(w).or_insert(0);
            *slot = (*slot).max(n);
        }
    }
    let clipped = counts(&cand)
        .into_iter()
        .map(|(w, n)| n.min(max_ref.get(w).copied().unwrap_or(0)))
        .sum();
    let c = cand.len();
    let reference_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0);
    UnigramStats {
        clipped,
        candidate_len: c,
        reference_len,
    }
}

fn bleu_from(stats: UnigramStats) -> f64 {
    if stats.candidate_len == 0 {
        return 0.0;
    }
    let precision = stats.clipped as f64 / stats.candidate_len as f64;
    let bp = if stats.candidate_len > stats.reference_len {
        1.0
    } else {
        (1.0 - stats.reference_len as f64 / stats.candidate_len as f64).exp()
    };
    precision * bp
}

/// Corpus BLEU-1 with the standard brevity penalty.
pub fn bleu1(instances: &[EvalInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Precondition("bleu1 needs at least one instance".into()));
    }
    let total = instances.iter().map(unigram_stats).fold(UnigramStats::default(), |acc, s| UnigramStats {
        clipped: acc.clipped + s.clipped,
        candidate_len: acc.candidate_len + s.candidate_len,
        reference_len: acc.reference_len + s.reference_len,
    });
    Ok(bleu_from(total))
}

/// BLEU-1 of a single instance.
pub fn sentence_bleu1(instance: &EvalInstance) -> f64 {
    bleu_from(unigram_stats(instance))
}

/// Length of the longest common subsequence of two token lists.
pub fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn rouge_pair(cand: &[&str], reference: &[&str]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(cand, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// ROUGE-L of one instance: best F-score over its references.
pub fn sentence_rouge_l(instance: &EvalInstance) -> f64 {
    let cand = tokens(&instance.candidate);
    instance
        .references
        .iter()
        .map(|r| rouge_pair(&cand, &tokens(r)))
        .fold(0.0, f64::max)
}

/// Corpus ROUGE-L: mean of per-instance scores.
pub fn rouge_l(instances: &[EvalInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Precondition("rouge_l needs at least one instance".into()));
    }
    Ok(instances.iter().map(sentence_rouge_l).sum::<f64>() / instances.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(c: &str, refs: &[&str]) -> EvalInstance {
        EvalInstance::new("x", c, refs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn bleu_examples() {
        let b = bleu1(&[inst("a b c", &["a b d"])]).unwrap();
        assert!((b - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu1(&[inst("a b c", &["a b c"])]).unwrap(), 1.0);
        let short = bleu1(&[inst("a", &["a b c d"])]).unwrap();
        assert!((short - (-3.0f64).exp()).abs() < 1e-12);
        assert!((short - 0.0498).abs() < 1e-4);
    }

    #[test]
    fn bleu_clips_repeated_words() {
        let s = unigram_stats(&inst("the the the", &["the cat", "the the dog"]));
        assert_eq!(s.clipped, 2);
        assert_eq!(s.reference_len, 3);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(bleu1(&[inst("", &["a b"])]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[inst("", &["a b"])]).unwrap(), 0.0);
        assert!(bleu1(&[]).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&[inst("a b c", &["a b c"])]).unwrap(), 1.0);
        let r = rouge_l(&[inst("a b c d", &["a c d"])]).unwrap();
        let expected = (1.0 + 1.44) * 0.75 / (1.0 + 1.44 * 0.75);
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.8798).abs() < 1e-4);
        assert_eq!(rouge_l(&[inst("a b", &["c d"])]).unwrap(), 0.0);
    }

    #[test]
    fn rouge_takes_best_reference() {
        let r = sentence_rouge_l(&inst("a b", &["x y", "a b"]));
        assert_eq!(r, 1.0);
    }
}
