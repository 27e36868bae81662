//! Independent reference implementations shared by the integration tests.
//! None of these call into the decoder or metric code they check.

#![allow(dead_code)]

use std::collections::HashMap;

use faithdec::embedding::BagOfWordsOracle;
use faithdec::lm::TabularLm;
use faithdec::metrics::EvalInstance;
use faithdec::{TokenId, VocabInfo};
use rand::Rng;

pub const CTX: &str = "clip";

/// A toy model with its raw tables, so oracles can read probabilities
/// without going through the crate.
pub struct ToyLm {
    pub lm: TabularLm,
    pub words: Vec<String>,
    pub table: HashMap<Vec<u32>, Vec<f64>>,
    pub audio: Vec<f64>,
}

/// Random model over `vocab_size` ids (0 = BOS, 1 = EOS), one distribution
/// per prefix shorter than `max_len`. Probabilities are multiples of 1/64
/// when `coarse`, which makes exact ties likely.
pub fn random_toy(rng: &mut impl Rng, vocab_size: usize, max_len: usize, coarse: bool) -> ToyLm {
    let mut words = vec!["<s>".to_string(), "</s>".to_string()];
    words.extend((2..vocab_size).map(|i| format!("tok{i}")));
    let vocab = VocabInfo::new(TokenId(0), TokenId(1), words.clone()).unwrap();
    let mut lm = TabularLm::new(vocab);
    let mut table = HashMap::new();
    let mut prefixes = vec![vec![0u32]];
    let mut i = 0;
    while i < prefixes.len() {
        let prefix = prefixes[i].clone();
        i += 1;
        let probs = random_distribution(rng, vocab_size, coarse);
        let ids: Vec<TokenId> = prefix.iter().copied().map(TokenId).collect();
        lm.insert(CTX, ids, &probs).unwrap();
        table.insert(prefix.clone(), probs);
        if prefix.len() + 1 < max_len {
            for t in 2..vocab_size as u32 {
                let mut next = prefix.clone();
                next.push(t);
                prefixes.push(next);
            }
        }
    }
    let audio = (0..vocab_size).map(|_| rng.random_range(0.0..1.0)).collect();
    ToyLm { lm, words, table, audio }
}

fn random_distribution(rng: &mut impl Rng, n: usize, coarse: bool) -> Vec<f64> {
    if coarse {
        // Integer weights summing to 64 over ids 1..n.
        let mut w = vec![0u32; n];
        for _ in 0..64 {
            w[rng.random_range(1..n)] += 1;
        }
        w.iter().map(|&c| c as f64 / 64.0).collect()
    } else {
        let mut w: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { rng.random_range(0.01..1.0) }).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        w
    }
}

impl ToyLm {
    /// Embedding provider holding this model's clip vector.
    pub fn provider(&self) -> BagOfWordsOracle {
        BagOfWordsOracle::new(self.lm.vocab().clone())
            .with_audio(CTX, self.audio.clone())
            .unwrap()
    }

    pub fn logprob(&self, prefix: &[u32], token: u32) -> f64 {
        self.table[prefix][token as usize].ln()
    }

    /// Every complete sequence the decoders can emit: BOS, up to
    /// `max_len - 2` content tokens, EOS. Zero-probability steps are not
    /// taken, except the EOS that closes a sequence at the length cap.
    pub fn all_sequences(&self, max_len: usize) -> Vec<(Vec<u32>, f64)> {
        let n = self.words.len() as u32;
        let mut out = Vec::new();
        let mut stack = vec![(vec![0u32], 0.0f64)];
        while let Some((prefix, lp)) = stack.pop() {
            let at_cap = prefix.len() + 1 >= max_len;
            let eos = self.logprob(&prefix, 1);
            if at_cap || eos > f64::NEG_INFINITY {
                out.push(([prefix.as_slice(), &[1]].concat(), lp + eos));
            }
            if !at_cap {
                for t in 2..n {
                    let step = self.logprob(&prefix, t);
                    if step > f64::NEG_INFINITY {
                        let mut next = prefix.clone();
                        next.push(t);
                        stack.push((next, lp + step));
                    }
                }
            }
        }
        out
    }

    /// Argmax of the final-ranking score over `all_sequences`, with the
    /// decoder's documented tie-breaks.
    pub fn exhaustive_winner(&self, max_len: usize, alpha: f64) -> Vec<u32> {
        let mut all: Vec<(f64, f64, Vec<u32>)> = self
            .all_sequences(max_len)
            .into_iter()
            .map(|(s, lp)| (self.final_score(&s, lp, alpha), lp, s))
            .collect();
        all.sort_by(|a, b| {
            let na = a.1 / (a.2.len() - 1) as f64;
            let nb = b.1 / (b.2.len() - 1) as f64;
            b.0.total_cmp(&a.0)
                .then(nb.total_cmp(&na))
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
        });
        all.swap_remove(0).2
    }

    pub fn text(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .filter(|&&t| t > 1)
            .map(|&t| self.words[t as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Cosine between the bag-of-words count vector of `tokens` and the
    /// clip vector, or 0 for an empty caption.
    pub fn faithfulness(&self, tokens: &[u32]) -> f64 {
        let mut counts = vec![0.0; self.words.len()];
        for &t in tokens.iter().filter(|&&t| t > 1) {
            counts[t as usize] += 1.0;
        }
        cosine(&counts, &self.audio).unwrap_or(0.0)
    }

    /// `(1 - alpha) * exp(logprob / content length) + alpha * faithfulness`.
    pub fn final_score(&self, tokens: &[u32], logprob: f64, alpha: f64) -> f64 {
        let norm = logprob / (tokens.len() - 1) as f64;
        (1.0 - alpha) * norm.exp() + alpha * self.faithfulness(tokens)
    }
}

pub fn cosine(x: &[f64], y: &[f64]) -> Option<f64> {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        None
    } else {
        Some(dot / (nx * ny))
    }
}

/// Clipped unigram matches, candidate length and chosen reference length
/// for one instance, counted by nested loops.
pub fn brute_unigram(candidate: &[&str], references: &[Vec<&str>]) -> (usize, usize, usize) {
    let mut matched = 0;
    let mut seen: Vec<&str> = Vec::new();
    for w in candidate {
        if seen.contains(w) {
            continue;
        }
        seen.push(w);
        let c = candidate.iter().filter(|x| *x == w).count();
        let max_ref = references
            .iter()
            .map(|r| r.iter().filter(|x| *x == w).count())
            .max()
            .unwrap_or(0);
        matched += c.min(max_ref);
    }
    let c = candidate.len();
    let mut best = references[0].len();
    for r in references {
        let d = r.len().abs_diff(c);
        let bd = best.abs_diff(c);
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    (matched, c, best)
}

/// Corpus BLEU-1 from summed brute-force counts.
pub fn brute_bleu1(corpus: &[(Vec<&str>, Vec<Vec<&str>>)]) -> f64 {
    let (mut m, mut c, mut r) = (0, 0, 0);
    for (cand, refs) in corpus {
        let (a, b, d) = brute_unigram(cand, refs);
        m += a;
        c += b;
        r += d;
    }
    if c == 0 {
        return 0.0;
    }
    let p = m as f64 / c as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    p * bp
}

/// Longest common subsequence by enumerating every subsequence of the
/// shorter side (inputs are kept tiny).
pub fn brute_lcs(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&str> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| short[i]).collect();
        if sub.len() > best && is_subsequence(&sub, long) {
            best = sub.len();
        }
    }
    best
}

fn is_subsequence(sub: &[&str], seq: &[&str]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|w| it.any(|x| x == w))
}

/// ROUGE-L F-score with beta = 1.2 against the best reference.
pub fn brute_rouge_l(candidate: &[&str], references: &[Vec<&str>]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    references
        .iter()
        .map(|r| {
            let l = brute_lcs(candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / candidate.len() as f64;
            let rc = l / r.len() as f64;
            (1.0 + beta2) * p * rc / (rc + beta2 * p)
        })
        .fold(0.0, f64::max)
}

pub const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

pub fn random_sentence(rng: &mut impl Rng, max: usize) -> Vec<&'static str> {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect()
}

pub type Corpus = Vec<(Vec<&'static str>, Vec<Vec<&'static str>>)>;

pub fn random_corpus(rng: &mut impl Rng) -> Corpus {
    (0..rng.random_range(1..=5))
        .map(|_| {
            let refs = (0..rng.random_range(1..=3)).map(|_| random_sentence(rng, 6)).collect();
            (random_sentence(rng, 6), refs)
        })
        .collect()
}

pub fn to_instances(corpus: &Corpus) -> Vec<EvalInstance> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, (c, refs))| {
            EvalInstance::new(format!("i{i}"), &c.join(" "), refs.iter().map(|r| r.join(" ")).collect()).unwrap()
        })
        .collect()
}
