use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{by_logprob_then_tokens, detokenize, expansions, weighted_score, NBestList, RolloutCache, ScoredHypothesis};
use crate::embedding::{cosine_similarity, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::lm::LmSession;
use crate::types::{normalize_text, Hypothesis, TokenId, ValidatedConfig};

/// One expansion considered during a faithful search step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub parent: Hypothesis,
    pub token: TokenId,
    pub step_logprob: f64,
    /// Model probability of the whole candidate path, `exp(cumulative logprob)`.
    pub model_prob: f64,
    pub rolled_out: Hypothesis,
    pub faithfulness: f64,
    pub weighted: f64,
    #[serde(skip)]
    path: Hypothesis,
}

impl Candidate {
    /// The parent extended by this candidate's token.
    pub fn hypothesis(&self) -> &Hypothesis {
        &self.path
    }
}

/// Everything the search saw at one step, candidates in selection order.
#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub candidates: Vec<Candidate>,
    /// Token sequences of the beams kept for the next step.
    pub kept: Vec<Vec<TokenId>>,
}

/// Final ranking of a completed hypothesis: length-normalized model
/// probability mixed with whole-caption faithfulness at the same weight.
pub fn final_score(alpha: f64, hypothesis: &Hypothesis, faithfulness: f64) -> f64 {
    (1.0 - alpha) * hypothesis.length_normalized_logprob().exp() + alpha * faithfulness
}

type StepHook<'a> = Box<dyn FnMut(&StepTrace) + 'a>;

/// Faithful beam search with optional instrumentation.
pub struct FaithfulDecoder<'a> {
    rollout_cache: bool,
    shuffle_seed: Option<u64>,
    on_step: Option<StepHook<'a>>,
}

impl Default for FaithfulDecoder<'_> {
    fn default() -> Self {
        Self {
            rollout_cache: true,
            shuffle_seed: None,
            on_step: None,
        }
    }
}

impl<'a> FaithfulDecoder<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rollout_cache(mut self, enabled: bool) -> Self {
        self.rollout_cache = enabled;
        self
    }

    /// Shuffles each step's candidate list before ranking. Output must not
    /// depend on it; exists to test the tie-breaking order.
    pub fn shuffle_candidates(mut self, seed: u64) -> Self {
        self.shuffle_seed = Some(seed);
        self
    }

    pub fn on_step(mut self, f: impl FnMut(&StepTrace) + 'a) -> Self {
        self.on_step = Some(Box::new(f));
        self
    }

    pub fn run<P: EmbeddingProvider + ?Sized>(
        &mut self,
        session: &LmSession,
        provider: &P,
        context_id: &str,
        cfg: &ValidatedConfig,
    ) -> Result<NBestList> {
        let vocab = session.vocab();
        let eos = vocab.eos();
        let alpha = cfg.alpha;
        // Fetched once; also fails fast on a clip the provider cannot embed.
        let audio = provider.embed_audio(context_id)?;

        let mut cache = RolloutCache::new(cfg.rollout_max_len, self.rollout_cache);
        let mut faith_by_text: HashMap<String, f64> = HashMap::new();
        let mut faithfulness = |tokens: &[TokenId]| -> Result<f64> {
            let text = detokenize(vocab, tokens)?;
            if let Some(&f) = faith_by_text.get(&text) {
                return Ok(f);
            }
            let embedded = provider.embed_text(&normalize_text(&text))?;
            let f = match cosine_similarity(&audio, &embedded) {
                Ok(f) => f,
                // A caption with no embeddable content is neutral.
                Err(Error::ZeroVector) => 0.0,
                Err(e) => return Err(e),
            };
            faith_by_text.insert(text, f);
            Ok(f)
        };
        let mut rng = self.shuffle_seed.map(ChaCha8Rng::seed_from_u64);

        let mut live = vec![Hypothesis::root(vocab)];
        let mut pool: Vec<(Hypothesis, f64)> = Vec::new();
        let mut step = 0;
        while !live.is_empty() {
            step += 1;
            let mut candidates = Vec::new();
            for beam in &live {
                for (token, step_logprob) in expansions(session, beam, cfg.expansions_per_beam, cfg.max_len)? {
                    let hyp = beam.extend(token, step_logprob, eos);
                    let rolled_out = if hyp.completed {
                        hyp.clone()
                    } else {
                        cache.rollout(session, &hyp)?
                    };
                    let faith = faithfulness(&rolled_out.tokens)?;
                    let model_prob = hyp.logprob.exp();
                    let weighted = weighted_score(model_prob, faith, alpha)?;
                    candidates.push(Candidate {
                        path: hyp,
                        parent: beam.clone(),
                        token,
                        step_logprob,
                        model_prob,
                        rolled_out,
                        faithfulness: faith,
                        weighted,
                    });
                }
            }
            if let Some(rng) = rng.as_mut() {
                candidates.shuffle(rng);
            }
            candidates.sort_by(|a, b| {
                b.weighted
                    .total_cmp(&a.weighted)
                    .then_with(|| by_logprob_then_tokens(&a.path, &b.path))
            });
            if log::log_enabled!(log::Level::Debug) {
                log_ties(&candidates, cfg.seed, step);
            }

            live.clear();
            for c in &candidates {
                if c.path.completed {
                    pool.push((c.path.clone(), c.faithfulness));
                } else if live.len() < cfg.beam_width {
                    live.push(c.path.clone());
                }
            }
            if let Some(f) = self.on_step.as_mut() {
                f(&StepTrace {
                    step,
                    kept: live.iter().map(|h| h.tokens.clone()).collect(),
                    candidates,
                });
            }
        }

        let mut ranked: Vec<(f64, Hypothesis, f64)> = pool
            .into_iter()
            .map(|(h, faith)| (final_score(alpha, &h, faith), h, faith))
            .collect();
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| {
                    b.1.length_normalized_logprob()
                        .total_cmp(&a.1.length_normalized_logprob())
                })
                .then_with(|| by_logprob_then_tokens(&a.1, &b.1))
        });
        ranked.truncate(cfg.n_best);
        let hypotheses = ranked
            .into_iter()
            .map(|(score, h, faith)| {
                Ok(ScoredHypothesis {
                    caption: detokenize(vocab, &h.tokens)?,
                    score,
                    faithfulness: Some(faith),
                    hypothesis: h,
                })
            })
            .collect::<Result<_>>()?;
        Ok(NBestList { hypotheses })
    }
}

fn log_ties(candidates: &[Candidate], seed: u64, step: usize) {
    for pair in candidates.windows(2) {
        if pair[0].weighted == pair[1].weighted {
            log::debug!(
                "seed={seed} step={step}: weighted tie {:.6} between tokens {} and {}",
                pair[0].weighted,
                pair[0].token,
                pair[1].token
            );
        }
    }
}

/// Beam search guided by the similarity between each expansion's greedy
/// rollout and the clip `context_id`.
pub fn faithful_beam_search<P: EmbeddingProvider + ?Sized>(
    session: &LmSession,
    provider: &P,
    context_id: &str,
    cfg: &ValidatedConfig,
) -> Result<NBestList> {
    FaithfulDecoder::new().run(session, provider, context_id, cfg)
}
