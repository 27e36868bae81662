//! Client side of the newline-delimited JSON model protocol.
//!
//! Each request and response is a single JSON object on its own line.
//! Requests carry an `"op"` field; responses carry `"ok"` plus either an
//! op-specific payload or `{"error": code, "message": text}`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LanguageModel, LmSession, SessionBackend};
use crate::error::{Error, Result};
use crate::types::{TokenId, VocabInfo};

/// Tolerance the server promises on `Σ exp(logprobs) = 1`.
pub const SERVER_SUM_TOLERANCE: f64 = 1e-4;

/// Protocol requests. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    OpenSession { context_id: String },
    Logprobs { session: String, prefix: Vec<u32> },
    EmbedText { text: String },
    EmbedAudio { context_id: String },
    CloseSession { session: String },
}

impl Request {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serialization is infallible")
    }
}

/// One ordered request/response stream over TCP.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let unavailable = |e: std::io::Error| Error::BackendUnavailable(format!("{addr}: {e}"));
        let sock = addr
            .to_socket_addrs()
            .map_err(unavailable)?
            .next()
            .ok_or_else(|| Error::BackendUnavailable(format!("{addr}: no address resolved")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(unavailable)?;
        stream.set_read_timeout(Some(timeout)).map_err(unavailable)?;
        stream.set_write_timeout(Some(timeout)).map_err(unavailable)?;
        stream.set_nodelay(true).map_err(unavailable)?;
        let writer = stream.try_clone().map_err(unavailable)?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
        })
    }

    /// Sends one request and returns the payload of a successful response.
    pub fn call(&mut self, request: &Request) -> Result<Value> {
        let mut line = request.to_line();
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::BackendUnavailable(format!("write failed: {e}")))?;

        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| Error::BackendUnavailable(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::BackendUnavailable("server closed the connection".into()));
        }
        let value: Value =
            serde_json::from_str(reply.trim_end()).map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        match value.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(value),
            Some(false) => {
                let code = value.get("error").and_then(Value::as_str).unwrap_or("unknown");
                let message = value.get("message").and_then(Value::as_str).unwrap_or("");
                Err(Error::Protocol(format!("{code}: {message}")))
            }
            None => Err(Error::Protocol("response lacks boolean `ok`".into())),
        }
    }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name)
        .ok_or_else(|| Error::Protocol(format!("response lacks `{name}`")))
}

fn as_u32(v: &Value, name: &str) -> Result<u32> {
    field(v, name)?
        .as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| Error::Protocol(format!("`{name}` is not a token id")))
}

/// Parses a JSON array of numbers. `null` decodes to negative infinity,
/// which is how zero-probability entries survive JSON encoding.
pub(crate) fn as_f64_vec(v: &Value, name: &str) -> Result<Vec<f64>> {
    field(v, name)?
        .as_array()
        .ok_or_else(|| Error::Protocol(format!("`{name}` is not an array")))?
        .iter()
        .map(|x| match x {
            Value::Null => Ok(f64::NEG_INFINITY),
            _ => x
                .as_f64()
                .ok_or_else(|| Error::Protocol(format!("`{name}` holds a non-number"))),
        })
        .collect()
}

/// Language model served over the wire protocol at `addr` (`host:port`).
#[derive(Debug, Clone)]
pub struct RemoteLm {
    addr: String,
    timeout: Duration,
}

impl RemoteLm {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl LanguageModel for RemoteLm {
    fn open_session(&self, context_id: &str) -> Result<LmSession> {
        let mut conn = Connection::connect(&self.addr, self.timeout)?;
        let reply = conn.call(&Request::OpenSession {
            context_id: context_id.to_string(),
        })?;
        let session = field(&reply, "session")?
            .as_str()
            .ok_or_else(|| Error::Protocol("`session` is not a string".into()))?
            .to_string();
        let vocab_size = field(&reply, "vocab_size")?
            .as_u64()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Protocol("`vocab_size` is not a positive integer".into()))?
            as usize;
        let bos = as_u32(&reply, "bos_id")?;
        let eos = as_u32(&reply, "eos_id")?;
        // Token strings are an optional extension; ids stand in when absent.
        let token_strings = match reply.get("tokens") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|t| {
                    t.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| Error::Protocol("`tokens` holds a non-string".into()))
                })
                .collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(Error::Protocol("`tokens` is not an array".into())),
            None => (0..vocab_size).map(|i| i.to_string()).collect(),
        };
        if token_strings.len() != vocab_size {
            return Err(Error::Protocol(format!(
                "advertised vocab_size {vocab_size} but {} token strings",
                token_strings.len()
            )));
        }
        let vocab = VocabInfo::new(TokenId(bos), TokenId(eos), token_strings)
            .map_err(|e| Error::Protocol(format!("invalid advertised vocabulary: {e}")))?;
        Ok(LmSession::new(
            context_id,
            Arc::new(RemoteSession {
                conn: Mutex::new(conn),
                session,
                vocab,
            }),
        ))
    }
}

struct RemoteSession {
    // One request in flight per session.
    conn: Mutex<Connection>,
    session: String,
    vocab: VocabInfo,
}

impl SessionBackend for RemoteSession {
    fn vocab(&self) -> &VocabInfo {
        &self.vocab
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let request = Request::Logprobs {
            session: self.session.clone(),
            prefix: prefix.iter().map(|t| t.0).collect(),
        };
        let reply = self.conn.lock().expect("connection lock poisoned").call(&request)?;
        let logprobs = as_f64_vec(&reply, "logprobs")?;
        if logprobs.len() != self.vocab.vocab_size() {
            return Err(Error::Protocol(format!(
                "expected {} logprobs, got {}",
                self.vocab.vocab_size(),
                logprobs.len()
            )));
        }
        if logprobs.iter().any(|v| v.is_nan() || *v > 0.0) {
            return Err(Error::Protocol("logprobs must be <= 0".into()));
        }
        let mass: f64 = logprobs.iter().map(|v| v.exp()).sum();
        if (mass - 1.0).abs() > SERVER_SUM_TOLERANCE {
            return Err(Error::Protocol(format!("logprobs exp-sum {mass} is not 1")));
        }
        Ok(logprobs)
    }
}

impl Drop for RemoteSession {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            let _ = conn.call(&Request::CloseSession {
                session: self.session.clone(),
            });
        }
    }
}
