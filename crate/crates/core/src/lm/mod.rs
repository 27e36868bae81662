//! Conditional language-model contract and its backends.
//!
//! A backend is opened once per conditioning input (`context_id`) and
//! answers next-token queries over the full vocabulary in natural-log space.

mod counting;
pub mod remote;
mod tabular;

use std::sync::Arc;

pub use counting::{CallCounter, CountingLm};
pub use remote::RemoteLm;
pub use tabular::TabularLm;

use crate::error::{Error, Result};
use crate::types::{TokenId, VocabInfo};

/// A source of conditional next-token distributions.
pub trait LanguageModel: Send + Sync {
    fn open_session(&self, context_id: &str) -> Result<LmSession>;
}

/// Backend half of a session. Implementations may assume the prefix has
/// already been validated by [`LmSession::next_logprobs`].
pub trait SessionBackend: Send + Sync {
    fn vocab(&self) -> &VocabInfo;
    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

/// A language model bound to one conditioning input.
#[derive(Clone)]
pub struct LmSession {
    context_id: String,
    backend: Arc<dyn SessionBackend>,
}

impl std::fmt::Debug for LmSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmSession")
            .field("context_id", &self.context_id)
            .field("vocab_size", &self.vocab().vocab_size())
            .finish()
    }
}

impl LmSession {
    pub fn new(context_id: impl Into<String>, backend: Arc<dyn SessionBackend>) -> Self {
        Self {
            context_id: context_id.into(),
            backend,
        }
    }

    pub fn context_id(&self) -> &str {
        &self.context_id
    }

    pub fn vocab(&self) -> &VocabInfo {
        self.backend.vocab()
    }

    /// Log-probabilities of every vocabulary entry following `prefix`.
    ///
    /// `prefix` must start with BOS, contain only valid ids and no EOS.
    pub fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let vocab = self.vocab();
        if prefix.first() != Some(&vocab.bos()) {
            return Err(Error::Precondition("prefix must start with bos_id".into()));
        }
        for &t in prefix {
            vocab.check(t)?;
            if t == vocab.eos() {
                return Err(Error::Precondition("prefix must not contain eos_id".into()));
            }
        }
        self.backend.next_logprobs(prefix)
    }
}
