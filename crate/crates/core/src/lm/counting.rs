use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{LanguageModel, LmSession, SessionBackend};
use crate::error::Result;
use crate::types::{TokenId, VocabInfo};

/// Shared count of `next_logprobs` calls.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::SeqCst);
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// Wraps a backend and counts every distribution request made through any
/// of its sessions.
pub struct CountingLm<L> {
    inner: L,
    counter: CallCounter,
}

impl<L: LanguageModel> CountingLm<L> {
    pub fn new(inner: L) -> Self {
        Self {
            inner,
            counter: CallCounter::default(),
        }
    }

    pub fn counter(&self) -> CallCounter {
        self.counter.clone()
    }
}

impl<L: LanguageModel> LanguageModel for CountingLm<L> {
    fn open_session(&self, context_id: &str) -> Result<LmSession> {
        let inner = self.inner.open_session(context_id)?;
        Ok(LmSession::new(
            context_id,
            Arc::new(CountingSession {
                inner,
                counter: self.counter.clone(),
            }),
        ))
    }
}

struct CountingSession {
    inner: LmSession,
    counter: CallCounter,
}

impl SessionBackend for CountingSession {
    fn vocab(&self) -> &VocabInfo {
        self.inner.vocab()
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.counter.bump();
        self.inner.next_logprobs(prefix)
    }
}
