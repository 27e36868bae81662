use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::lm::LmSession;
use crate::types::{Hypothesis, TokenId};

/// Greedy continuation steps from a prefix to EOS: `(token, step logprob)`.
type Tail = Vec<(TokenId, f64)>;

/// Prefix-keyed memo of greedy completions for one session and one cap.
///
/// Every prefix visited while rolling out is stored, since the greedy
/// completion of an intermediate prefix is a suffix of the outer one.
#[derive(Debug, Default)]
pub struct RolloutCache {
    enabled: bool,
    rollout_max_len: usize,
    tails: HashMap<Vec<TokenId>, Tail>,
}

impl RolloutCache {
    pub fn new(rollout_max_len: usize, enabled: bool) -> Self {
        Self {
            enabled,
            rollout_max_len,
            tails: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }

    /// Completes `prefix` greedily, consulting and filling the memo.
    pub fn rollout(&mut self, session: &LmSession, prefix: &Hypothesis) -> Result<Hypothesis> {
        if prefix.completed {
            return Ok(prefix.clone());
        }
        if prefix.len() > self.rollout_max_len {
            return Err(Error::Precondition(format!(
                "prefix of length {} exceeds rollout_max_len {}",
                prefix.len(),
                self.rollout_max_len
            )));
        }
        let vocab = session.vocab();
        let eos = vocab.eos();
        let mut tokens = prefix.tokens.clone();
        let mut steps: Tail = Vec::new();
        loop {
            if self.enabled {
                if let Some(tail) = self.tails.get(&tokens) {
                    steps.extend_from_slice(tail);
                    break;
                }
            }
            let logprobs = session.next_logprobs(&tokens)?;
            // Cap reached: EOS is the only way out.
            if tokens.len() + 1 >= self.rollout_max_len {
                steps.push((eos, logprobs[eos.index()]));
                break;
            }
            let (best, lp) = vocab
                .generable()
                .map(|t| (t, logprobs[t.index()]))
                .fold(None, |acc: Option<(TokenId, f64)>, (t, lp)| match acc {
                    Some((_, best)) if best >= lp => acc,
                    _ => Some((t, lp)),
                })
                .expect("vocabulary has at least EOS besides BOS");
            steps.push((best, lp));
            if best == eos {
                break;
            }
            tokens.push(best);
        }

        if self.enabled {
            let mut key = prefix.tokens.clone();
            for i in 0..steps.len() {
                self.tails.entry(key.clone()).or_insert_with(|| steps[i..].to_vec());
                key.push(steps[i].0);
            }
        }

        let mut out = prefix.clone();
        for (t, lp) in steps {
            out = out.extend(t, lp, eos);
        }
        Ok(out)
    }
}

/// Completes `prefix` by repeatedly appending the most probable next token
/// (lowest id on ties) until EOS, force-appending EOS when the hypothesis
/// is one token short of `rollout_max_len`. A completed hypothesis is
/// returned unchanged.
pub fn greedy_rollout(session: &LmSession, prefix: &Hypothesis, rollout_max_len: usize) -> Result<Hypothesis> {
    RolloutCache::new(rollout_max_len, false).rollout(session, prefix)
}
