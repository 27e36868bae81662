//! Built-in checks on bundled toy fixtures, run by `faithdec selftest`.

use std::cell::RefCell;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{faithful_beam_search, standard_beam_search, weighted_score, FaithfulDecoder};
use crate::embedding::{cosine_similarity, BagOfWordsOracle, FileEmbeddingStore};
use crate::error::Result;
use crate::lm::{CountingLm, LanguageModel, TabularLm};
use crate::metrics::{sentence_bleu1, sentence_rouge_l, EvalInstance};
use crate::types::{validate_config, DecodeConfig, EmbeddingVector, TokenId, VocabInfo};

pub const STEERING_LM: &str = include_str!("../fixtures/steering.lm");
pub const STEERING_AUDIO: &str = include_str!("../fixtures/steering.audio");
pub const STEERING_CLIP: &str = "clip1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        if self.detail.is_empty() {
            write!(f, "{status} {}", self.name)
        } else {
            write!(f, "{status} {}: {}", self.name, self.detail)
        }
    }
}

fn check(name: &'static str, outcome: Result<std::result::Result<(), String>>) -> CheckResult {
    match outcome {
        Ok(Ok(())) => CheckResult {
            name,
            passed: true,
            detail: String::new(),
        },
        Ok(Err(detail)) => CheckResult {
            name,
            passed: false,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// The two-branch steering model and its bag-of-words provider.
pub fn steering_fixture() -> Result<(TabularLm, BagOfWordsOracle)> {
    let lm = TabularLm::parse_str(STEERING_LM)?;
    let store = FileEmbeddingStore::parse_str(STEERING_AUDIO)?;
    let oracle = BagOfWordsOracle::from_store(lm.vocab().clone(), &store)?;
    Ok((lm, oracle))
}

/// Decoder settings under which the steering fixture keeps a single beam.
pub fn steering_config(alpha: f64) -> DecodeConfig {
    DecodeConfig {
        beam_width: 1,
        expansions_per_beam: 2,
        alpha,
        max_len: 6,
        rollout_max_len: 6,
        ..DecodeConfig::default()
    }
}

/// Random toy model: ids 0 and 1 are BOS and EOS, every prefix shorter than
/// `max_len` gets its own distribution (BOS always has probability 0).
pub fn random_toy_lm(rng: &mut impl Rng, context_id: &str, vocab_size: usize, max_len: usize) -> Result<TabularLm> {
    let mut names = vec!["<s>".to_string(), "</s>".to_string()];
    names.extend((2..vocab_size).map(|i| format!("w{i}")));
    let vocab = VocabInfo::new(TokenId(0), TokenId(1), names)?;
    let mut lm = TabularLm::new(vocab);
    let mut frontier = vec![vec![TokenId(0)]];
    while let Some(prefix) = frontier.pop() {
        let mut weights: Vec<f64> = (0..vocab_size)
            .map(|i| if i == 0 { 0.0 } else { rng.random_range(0.05..1.0) })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        if prefix.len() + 1 < max_len {
            for t in 2..vocab_size {
                let mut next = prefix.clone();
                next.push(TokenId(t as u32));
                frontier.push(next);
            }
        }
        lm.insert(context_id, prefix, &weights)?;
    }
    Ok(lm)
}

fn steering() -> Result<std::result::Result<(), String>> {
    let (lm, oracle) = steering_fixture()?;
    for (alpha, expected) in [(0.8, "soft bird"), (0.1, "loud engine")] {
        let session = lm.open_session(STEERING_CLIP)?;
        let cfg = validate_config(steering_config(alpha))?;
        let best = faithful_beam_search(&session, &oracle, STEERING_CLIP, &cfg)?;
        let caption = best.best().map(|h| h.caption.as_str()).unwrap_or_default();
        if caption != expected {
            return Ok(Err(format!("alpha {alpha}: got `{caption}`, expected `{expected}`")));
        }
    }
    Ok(Ok(()))
}

fn alpha_zero_equivalence() -> Result<std::result::Result<(), String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..25 {
        let vocab_size = rng.random_range(3..=5);
        let max_len = rng.random_range(2..=6);
        let lm = random_toy_lm(&mut rng, "c", vocab_size, max_len)?;
        let audio: Vec<f64> = (0..vocab_size).map(|_| rng.random_range(0.1..1.0)).collect();
        let oracle = BagOfWordsOracle::new(lm.vocab().clone()).with_audio("c", audio)?;
        let beam_width = rng.random_range(1..=3);
        let cfg = validate_config(DecodeConfig {
            beam_width,
            expansions_per_beam: rng.random_range(1..=vocab_size),
            alpha: 0.0,
            max_len,
            rollout_max_len: max_len + 1,
            n_best: rng.random_range(1..=beam_width),
            ..DecodeConfig::default()
        })?;
        let session = lm.open_session("c")?;
        let standard = standard_beam_search(&session, &cfg)?.token_sequences();
        let faithful = faithful_beam_search(&session, &oracle, "c", &cfg)?.token_sequences();
        if standard != faithful {
            return Ok(Err(format!("case {case}: {standard:?} != {faithful:?}")));
        }
    }
    Ok(Ok(()))
}

fn weighted_arithmetic() -> Result<std::result::Result<(), String>> {
    let w = weighted_score(0.5, 0.6, 0.8)?;
    if (w - 0.58).abs() > 1e-12 {
        return Ok(Err(format!("weighted_score(0.5, 0.6, 0.8) = {w}")));
    }
    if weighted_score(0.37, 0.9, 0.0)? != 0.37 || weighted_score(0.37, 0.9, 1.0)? != 0.9 {
        return Ok(Err("alpha 0/1 degeneracy is not exact".into()));
    }
    Ok(Ok(()))
}

fn cosine_basics() -> Result<std::result::Result<(), String>> {
    let x = EmbeddingVector::new(vec![0.3, -0.4, 1.2])?;
    let y = EmbeddingVector::new(vec![1.0, 0.0, 0.0])?;
    let z = EmbeddingVector::new(vec![0.0, 2.0, 0.0])?;
    let s = cosine_similarity(&x, &x)?;
    if (s - 1.0).abs() > 1e-9 {
        return Ok(Err(format!("self-similarity {s}")));
    }
    if cosine_similarity(&y, &z)? != 0.0 {
        return Ok(Err("orthogonal vectors are not at 0".into()));
    }
    Ok(Ok(()))
}

fn metric_examples() -> Result<std::result::Result<(), String>> {
    let inst = EvalInstance::new("m", "a b c", vec!["a b d".into()])?;
    let b = sentence_bleu1(&inst);
    if (b - 2.0 / 3.0).abs() > 1e-12 {
        return Ok(Err(format!("bleu1 = {b}")));
    }
    let same = EvalInstance::new("m", "a dog barks", vec!["a dog barks".into()])?;
    if sentence_bleu1(&same) != 1.0 || sentence_rouge_l(&same) != 1.0 {
        return Ok(Err("identical caption does not score 1.0".into()));
    }
    Ok(Ok(()))
}

fn rollout_budget() -> Result<std::result::Result<(), String>> {
    let (lm, oracle) = steering_fixture()?;
    let counting = CountingLm::new(lm);
    let counter = counting.counter();
    let cfg = validate_config(DecodeConfig {
        beam_width: 2,
        expansions_per_beam: 3,
        alpha: 0.8,
        max_len: 6,
        rollout_max_len: 6,
        ..DecodeConfig::default()
    })?;
    let bound = cfg.beam_width * cfg.expansions_per_beam * cfg.rollout_max_len;
    let session = counting.open_session(STEERING_CLIP)?;
    let worst = RefCell::new(0usize);
    let last = RefCell::new(0usize);
    FaithfulDecoder::new()
        .on_step(|_| {
            let now = counter.get();
            let used = now - *last.borrow();
            *last.borrow_mut() = now;
            let mut w = worst.borrow_mut();
            *w = (*w).max(used);
        })
        .run(&session, &oracle, STEERING_CLIP, &cfg)?;
    let worst = worst.into_inner();
    if worst > bound {
        return Ok(Err(format!("{worst} calls in one step, bound {bound}")));
    }
    Ok(Ok(()))
}

/// Runs every bundled check.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("weighted score arithmetic", weighted_arithmetic()),
        check("cosine basics", cosine_basics()),
        check("metric examples", metric_examples()),
        check("steering two-branch fixture", steering()),
        check("alpha=0 matches standard beam search", alpha_zero_equivalence()),
        check("rollout call budget", rollout_budget()),
    ]
}
