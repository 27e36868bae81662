//! Beam search decoders.
//!
//! [`standard_beam_search`] ranks partial hypotheses by cumulative model
//! log-probability. [`faithful_beam_search`] completes every expansion with
//! a greedy rollout, scores the rollout text against the clip in the shared
//! embedding space and selects beams by a convex mix of model probability
//! and that similarity. Both share expansion, tie-breaking and termination
//! rules so that a zero faithfulness weight reproduces the standard search
//! exactly.

mod beam;
mod faithful;
mod rollout;

use std::cmp::Ordering;

use serde::Serialize;

pub use beam::standard_beam_search;
pub use faithful::{faithful_beam_search, final_score, Candidate, FaithfulDecoder, StepTrace};
pub use rollout::{greedy_rollout, RolloutCache};

use crate::error::{Error, Result};
use crate::lm::LmSession;
use crate::types::{Hypothesis, TokenId, VocabInfo};

/// A completed hypothesis with its final ranking score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    pub caption: String,
    pub score: f64,
    /// Whole-caption similarity to the clip; `None` for the standard decoder.
    pub faithfulness: Option<f64>,
}

/// Top completed hypotheses, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NBestList {
    pub hypotheses: Vec<ScoredHypothesis>,
}

impl NBestList {
    pub fn best(&self) -> Option<&ScoredHypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn token_sequences(&self) -> Vec<Vec<TokenId>> {
        self.hypotheses.iter().map(|h| h.hypothesis.tokens.clone()).collect()
    }
}

/// Joins token strings with single spaces, dropping BOS and EOS.
pub fn detokenize(vocab: &VocabInfo, tokens: &[TokenId]) -> Result<String> {
    let mut words = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let s = vocab.token_str(t)?;
        if t != vocab.bos() && t != vocab.eos() {
            words.push(s);
        }
    }
    Ok(words.join(" "))
}

/// Mixes a model probability with a similarity: `(1 - alpha) * p + alpha * sim`.
pub fn weighted_score(p: f64, sim: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Precondition(format!("probability {p} outside [0, 1]")));
    }
    if !(-1.0..=1.0).contains(&sim) {
        return Err(Error::Precondition(format!("similarity {sim} outside [-1, 1]")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Precondition(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok((1.0 - alpha) * p + alpha * sim)
}

/// Tokens to try after `beam`, best first: the top `k` generable tokens of
/// nonzero probability by model log-probability (ties to the lower id), or
/// EOS alone once the hypothesis is one token short of `max_len`.
pub(crate) fn expansions(
    session: &LmSession,
    beam: &Hypothesis,
    k: usize,
    max_len: usize,
) -> Result<Vec<(TokenId, f64)>> {
    let vocab = session.vocab();
    let logprobs = session.next_logprobs(&beam.tokens)?;
    if beam.len() + 1 >= max_len {
        return Ok(vec![(vocab.eos(), logprobs[vocab.eos().index()])]);
    }
    let mut ranked: Vec<(TokenId, f64)> = vocab
        .generable()
        .map(|t| (t, logprobs[t.index()]))
        .filter(|(_, lp)| *lp > f64::NEG_INFINITY)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Orders by higher cumulative log-probability, then lexicographically
/// smaller token sequence.
pub(crate) fn by_logprob_then_tokens(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.tokens.cmp(&b.tokens))
}
