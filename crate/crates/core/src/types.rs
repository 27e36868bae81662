//! Domain types shared by every module, plus text canonicalisation and
//! decode-configuration validation.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        TokenId(id)
    }
}

/// Vocabulary advertised by a language-model backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabInfo {
    bos: TokenId,
    eos: TokenId,
    token_strings: Vec<String>,
}

impl VocabInfo {
    pub fn new(bos: TokenId, eos: TokenId, token_strings: Vec<String>) -> Result<Self> {
        let n = token_strings.len();
        if n == 0 {
            return Err(Error::config("vocab_size", "vocabulary must not be empty"));
        }
        if bos.index() >= n {
            return Err(Error::config("bos_id", format!("{bos} out of range for vocabulary size {n}")));
        }
        if eos.index() >= n {
            return Err(Error::config("eos_id", format!("{eos} out of range for vocabulary size {n}")));
        }
        if bos == eos {
            return Err(Error::config("eos_id", "bos_id and eos_id must differ"));
        }
        Ok(Self {
            bos,
            eos,
            token_strings,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_strings.len()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token_strings(&self) -> &[String] {
        &self.token_strings
    }

    pub fn token_str(&self, id: TokenId) -> Result<&str> {
        self.token_strings
            .get(id.index())
            .map(String::as_str)
            .ok_or(Error::InvalidToken {
                id: id.0,
                vocab_size: self.vocab_size(),
            })
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        self.token_str(id).map(|_| ())
    }

    /// All ids a decoder may emit after BOS: everything except BOS itself.
    pub fn generable(&self) -> impl Iterator<Item = TokenId> + '_ {
        let bos = self.bos;
        (0..self.vocab_size() as u32)
            .map(TokenId)
            .filter(move |&t| t != bos)
    }
}

/// A BOS-rooted token path with its cumulative natural-log model probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub completed: bool,
}

impl Hypothesis {
    /// The BOS-only starting hypothesis.
    pub fn root(vocab: &VocabInfo) -> Self {
        Self {
            tokens: vec![vocab.bos()],
            logprob: 0.0,
            completed: false,
        }
    }

    /// Builds a hypothesis from explicit parts, checking the structural
    /// invariants against `vocab`.
    pub fn from_parts(vocab: &VocabInfo, tokens: Vec<TokenId>, logprob: f64) -> Result<Self> {
        if tokens.first() != Some(&vocab.bos()) {
            return Err(Error::Precondition("hypothesis must start with bos_id".into()));
        }
        for &t in &tokens {
            vocab.check(t)?;
        }
        let eos_count = tokens.iter().filter(|&&t| t == vocab.eos()).count();
        let completed = tokens.last() == Some(&vocab.eos());
        if eos_count > 1 || (eos_count == 1 && !completed) {
            return Err(Error::Precondition("eos_id may only appear once, as the last token".into()));
        }
        if logprob > 0.0 || logprob.is_nan() {
            return Err(Error::Precondition(format!("logprob must be <= 0, got {logprob}")));
        }
        Ok(Self {
            tokens,
            logprob,
            completed,
        })
    }

    /// Appends `token` with its step log-probability.
    #[must_use]
    pub fn extend(&self, token: TokenId, step_logprob: f64, eos: TokenId) -> Self {
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(token);
        Self {
            tokens,
            logprob: self.logprob + step_logprob,
            completed: token == eos,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Cumulative log-probability divided by the number of generated tokens
    /// (BOS excluded). The BOS-only hypothesis normalizes to 0.
    pub fn length_normalized_logprob(&self) -> f64 {
        let generated = self.tokens.len().saturating_sub(1);
        if generated == 0 {
            0.0
        } else {
            self.logprob / generated as f64
        }
    }
}

/// Search knobs shared by the standard and the faithful decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Weight of the faithfulness term; 0 reduces to plain beam search.
    pub alpha: f64,
    /// Token cap including BOS and EOS.
    pub max_len: usize,
    pub rollout_max_len: usize,
    pub expansions_per_beam: usize,
    pub seed: u64,
    pub n_best: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 4,
            alpha: 0.8,
            max_len: 20,
            rollout_max_len: 30,
            expansions_per_beam: 8,
            seed: 0,
            n_best: 1,
        }
    }
}

/// A [`DecodeConfig`] whose invariants have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig(DecodeConfig);

impl Deref for ValidatedConfig {
    type Target = DecodeConfig;

    fn deref(&self) -> &DecodeConfig {
        &self.0
    }
}

impl ValidatedConfig {
    pub fn into_inner(self) -> DecodeConfig {
        self.0
    }
}

pub fn validate_config(cfg: DecodeConfig) -> Result<ValidatedConfig> {
    if cfg.beam_width == 0 {
        return Err(Error::config("beam_width", "must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::config("alpha", format!("{} is outside [0, 1]", cfg.alpha)));
    }
    // BOS and EOS both count towards the cap.
    if cfg.max_len < 2 {
        return Err(Error::config("max_len", format!("{} leaves no room for BOS and EOS", cfg.max_len)));
    }
    if cfg.rollout_max_len < cfg.max_len {
        return Err(Error::config(
            "rollout_max_len",
            format!("{} is smaller than max_len {}", cfg.rollout_max_len, cfg.max_len),
        ));
    }
    if cfg.expansions_per_beam == 0 {
        return Err(Error::config("expansions_per_beam", "must be positive"));
    }
    if cfg.n_best == 0 || cfg.n_best > cfg.beam_width {
        return Err(Error::config(
            "n_best",
            format!("{} must be in 1..={}", cfg.n_best, cfg.beam_width),
        ));
    }
    Ok(ValidatedConfig(cfg))
}

/// Lowercases and collapses all whitespace runs to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A point in the shared audio-text embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("dim", "embedding dimension must be positive"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("embedding component {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}
