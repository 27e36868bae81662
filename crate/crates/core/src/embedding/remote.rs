use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::lm::remote::{as_f64_vec, Connection, Request};
use crate::types::EmbeddingVector;

/// Embedding provider served over the model wire protocol.
///
/// The dimension is learned from the first response and enforced on every
/// later one.
pub struct RemoteEmbeddings {
    conn: Mutex<Connection>,
    dim: OnceLock<usize>,
}

impl RemoteEmbeddings {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        Ok(Self {
            conn: Mutex::new(Connection::connect(addr, timeout)?),
            dim: OnceLock::new(),
        })
    }

    fn fetch(&self, request: Request) -> Result<EmbeddingVector> {
        let reply = self.conn.lock().expect("connection lock poisoned").call(&request)?;
        let values = as_f64_vec(&reply, "vector")?;
        let dim = *self.dim.get_or_init(|| values.len());
        if values.len() != dim {
            return Err(Error::Protocol(format!(
                "embedding of dimension {} after advertising {dim}",
                values.len()
            )));
        }
        EmbeddingVector::new(values).map_err(|e| Error::Protocol(e.to_string()))
    }
}

impl EmbeddingProvider for RemoteEmbeddings {
    fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.fetch(Request::EmbedText { text: text.to_string() })
    }

    fn embed_audio(&self, context_id: &str) -> Result<EmbeddingVector> {
        self.fetch(Request::EmbedAudio {
            context_id: context_id.to_string(),
        })
    }
}
