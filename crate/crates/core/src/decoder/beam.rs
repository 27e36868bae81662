use super::{by_logprob_then_tokens, detokenize, expansions, NBestList, ScoredHypothesis};
use crate::error::Result;
use crate::lm::LmSession;
use crate::types::{Hypothesis, ValidatedConfig};

/// Classic beam search over cumulative model log-probability.
///
/// Each step expands every live beam by its `expansions_per_beam` most
/// probable tokens, retires completed candidates to a pool and keeps the
/// `beam_width` best partial ones. The pool is ranked by length-normalized
/// log-probability, then cumulative log-probability, then token sequence.
pub fn standard_beam_search(session: &LmSession, cfg: &ValidatedConfig) -> Result<NBestList> {
    let vocab = session.vocab();
    let mut live = vec![Hypothesis::root(vocab)];
    let mut pool: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        let mut candidates = Vec::new();
        for beam in &live {
            for (token, lp) in expansions(session, beam, cfg.expansions_per_beam, cfg.max_len)? {
                candidates.push(beam.extend(token, lp, vocab.eos()));
            }
        }
        candidates.sort_by(by_logprob_then_tokens);
        live.clear();
        for c in candidates {
            if c.completed {
                pool.push(c);
            } else if live.len() < cfg.beam_width {
                live.push(c);
            }
        }
    }

    pool.sort_by(|a, b| {
        b.length_normalized_logprob()
            .total_cmp(&a.length_normalized_logprob())
            .then_with(|| by_logprob_then_tokens(a, b))
    });
    pool.truncate(cfg.n_best);
    let hypotheses = pool
        .into_iter()
        .map(|h| {
            Ok(ScoredHypothesis {
                caption: detokenize(vocab, &h.tokens)?,
                score: h.length_normalized_logprob(),
                faithfulness: None,
                hypothesis: h,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NBestList { hypotheses })
}
