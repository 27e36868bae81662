use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::{LanguageModel, LmSession, SessionBackend};
use crate::error::{Error, Result};
use crate::types::{TokenId, VocabInfo};

const SUM_TOLERANCE: f64 = 1e-9;

/// Explicit next-token probability table keyed by `(context_id, prefix)`.
///
/// Prefixes always include the leading BOS. Unlisted prefixes use the
/// fallback distribution (uniform unless the file overrides it).
#[derive(Debug, Clone)]
pub struct TabularLm {
    vocab: VocabInfo,
    rows: HashMap<(String, Vec<TokenId>), Vec<f64>>,
    fallback: Vec<f64>,
}

impl TabularLm {
    /// Empty table with a uniform fallback.
    pub fn new(vocab: VocabInfo) -> Self {
        let n = vocab.vocab_size();
        let fallback = vec![1.0 / n as f64; n];
        Self {
            vocab,
            rows: HashMap::new(),
            fallback,
        }
    }

    pub fn vocab(&self) -> &VocabInfo {
        &self.vocab
    }

    pub fn set_fallback(&mut self, probs: &[f64]) -> Result<()> {
        self.fallback = self.checked_probs("<fallback>", probs)?;
        Ok(())
    }

    /// Inserts a probability row. `prefix` must start with BOS.
    pub fn insert(&mut self, context_id: &str, prefix: Vec<TokenId>, probs: &[f64]) -> Result<()> {
        if prefix.first() != Some(&self.vocab.bos()) {
            return Err(Error::Precondition("row prefix must start with bos_id".into()));
        }
        for &t in &prefix {
            self.vocab.check(t)?;
            if t == self.vocab.eos() {
                return Err(Error::Precondition("row prefix must not contain eos_id".into()));
            }
        }
        let label = format!("{context_id}:{}", prefix_label(&prefix[1..]));
        let probs = self.checked_probs(&label, probs)?;
        self.rows.insert((context_id.to_string(), prefix), probs);
        Ok(())
    }

    fn checked_probs(&self, label: &str, probs: &[f64]) -> Result<Vec<f64>> {
        if probs.len() != self.vocab.vocab_size() {
            return Err(Error::Dimension {
                expected: self.vocab.vocab_size(),
                found: probs.len(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Normalization {
                prefix: label.to_string(),
                sum,
            });
        }
        Ok(probs.to_vec())
    }

    /// Probability row for `(context_id, prefix)`, or the fallback.
    pub fn probs(&self, context_id: &str, prefix: &[TokenId]) -> &[f64] {
        self.rows
            .get(&(context_id.to_string(), prefix.to_vec()))
            .unwrap_or(&self.fallback)
    }

    pub fn logprobs(&self, context_id: &str, prefix: &[TokenId]) -> Vec<f64> {
        self.probs(context_id, prefix).iter().map(|p| p.ln()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse(text, None)
    }

    fn parse(text: &str, path: Option<&Path>) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(path, line, msg);
        let mut header: Option<(usize, u32, u32)> = None;
        let mut tokens: Vec<Option<String>> = Vec::new();
        let mut fallback: Option<(usize, Vec<f64>)> = None;
        let mut rows: Vec<(usize, String, Vec<TokenId>, Vec<f64>)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let keyword = fields.next().unwrap_or_default();
            if header.is_none() && keyword != "vocab" {
                return Err(err(lineno, "expected `vocab <n> bos <id> eos <id>` header".into()));
            }
            match keyword {
                "vocab" => {
                    if header.is_some() {
                        return Err(err(lineno, "duplicate vocab header".into()));
                    }
                    let parts: Vec<&str> = fields.collect();
                    let [n, "bos", bos, "eos", eos] = parts.as_slice() else {
                        return Err(err(lineno, "expected `vocab <n> bos <id> eos <id>`".into()));
                    };
                    let n: usize = parse_num(n).map_err(|m| err(lineno, m))?;
                    let bos: u32 = parse_num(bos).map_err(|m| err(lineno, m))?;
                    let eos: u32 = parse_num(eos).map_err(|m| err(lineno, m))?;
                    if n == 0 || bos as usize >= n || eos as usize >= n || bos == eos {
                        return Err(err(lineno, format!("invalid vocab header (n={n}, bos={bos}, eos={eos})")));
                    }
                    header = Some((n, bos, eos));
                    tokens = vec![None; n];
                }
                "token" => {
                    let n = tokens.len();
                    let id: usize = parse_num(fields.next().unwrap_or_default()).map_err(|m| err(lineno, m))?;
                    if id >= n {
                        return Err(err(lineno, format!("token id {id} >= vocab size {n}")));
                    }
                    let rest = line
                        .splitn(3, char::is_whitespace)
                        .nth(2)
                        .map(str::trim)
                        .unwrap_or_default();
                    if rest.is_empty() {
                        return Err(err(lineno, format!("token {id} has no string")));
                    }
                    if tokens[id].replace(rest.to_string()).is_some() {
                        return Err(err(lineno, format!("token {id} defined twice")));
                    }
                }
                "fallback" => {
                    if fallback.is_some() {
                        return Err(err(lineno, "duplicate fallback".into()));
                    }
                    let probs = parse_probs(fields, tokens.len()).map_err(|m| err(lineno, m))?;
                    fallback = Some((lineno, probs));
                }
                "row" => {
                    let ctx = fields
                        .next()
                        .ok_or_else(|| err(lineno, "row is missing context id".into()))?;
                    let prefix_field = fields
                        .next()
                        .ok_or_else(|| err(lineno, "row is missing prefix".into()))?;
                    let (_, bos, eos) = header.expect("header checked above");
                    let mut prefix = vec![TokenId(bos)];
                    if prefix_field != "-" {
                        for part in prefix_field.split(',') {
                            let id: u32 = parse_num(part).map_err(|m| err(lineno, m))?;
                            if id as usize >= tokens.len() {
                                return Err(err(lineno, format!("token id {id} >= vocab size {}", tokens.len())));
                            }
                            if id == eos {
                                return Err(err(lineno, "row prefix contains eos id".into()));
                            }
                            prefix.push(TokenId(id));
                        }
                    }
                    let probs = parse_probs(fields, tokens.len()).map_err(|m| err(lineno, m))?;
                    rows.push((lineno, ctx.to_string(), prefix, probs));
                }
                other => return Err(err(lineno, format!("unknown directive `{other}`"))),
            }
        }

        let Some((_, bos, eos)) = header else {
            return Err(err(0, "missing vocab header".into()));
        };
        let token_strings = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| err(0, format!("token {i} is never defined"))))
            .collect::<Result<Vec<_>>>()?;
        let vocab = VocabInfo::new(TokenId(bos), TokenId(eos), token_strings)?;
        let mut lm = TabularLm::new(vocab);
        if let Some((_, probs)) = fallback {
            lm.set_fallback(&probs)?;
        }
        for (lineno, ctx, prefix, probs) in rows {
            let key = (ctx, prefix);
            if lm.rows.contains_key(&key) {
                return Err(err(lineno, format!("duplicate row for {}:{}", key.0, prefix_label(&key.1[1..]))));
            }
            lm.insert(&key.0, key.1, &probs)?;
        }
        Ok(lm)
    }

    /// Serializes the table in the text format accepted by [`TabularLm::load`].
    /// Rows are written in sorted order so output is stable.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let v = &self.vocab;
        let _ = writeln!(out, "vocab {} bos {} eos {}", v.vocab_size(), v.bos(), v.eos());
        for (i, s) in v.token_strings().iter().enumerate() {
            let _ = writeln!(out, "token {i} {s}");
        }
        let _ = writeln!(out, "fallback {}", format_probs(&self.fallback));
        let mut keys: Vec<_> = self.rows.keys().collect();
        keys.sort();
        for key in keys {
            let _ = writeln!(
                out,
                "row {} {} {}",
                key.0,
                prefix_label(&key.1[1..]),
                format_probs(&self.rows[key])
            );
        }
        out
    }
}

fn format_probs(probs: &[f64]) -> String {
    probs
        .iter()
        .map(|p| format!("{p:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn prefix_label(ids: &[TokenId]) -> String {
    if ids.is_empty() {
        "-".to_string()
    } else {
        ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("invalid number `{s}`"))
}

fn parse_probs<'a>(fields: impl Iterator<Item = &'a str>, n: usize) -> std::result::Result<Vec<f64>, String> {
    let probs = fields.map(parse_num::<f64>).collect::<std::result::Result<Vec<_>, _>>()?;
    if probs.len() != n {
        return Err(format!("expected {n} probabilities, found {}", probs.len()));
    }
    Ok(probs)
}

impl LanguageModel for Arc<TabularLm> {
    fn open_session(&self, context_id: &str) -> Result<LmSession> {
        Ok(LmSession::new(
            context_id,
            Arc::new(TabularSession {
                lm: Arc::clone(self),
                context_id: context_id.to_string(),
            }),
        ))
    }
}

impl LanguageModel for TabularLm {
    fn open_session(&self, context_id: &str) -> Result<LmSession> {
        Arc::new(self.clone()).open_session(context_id)
    }
}

struct TabularSession {
    lm: Arc<TabularLm>,
    context_id: String,
}

impl SessionBackend for TabularSession {
    fn vocab(&self) -> &VocabInfo {
        &self.lm.vocab
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.lm.logprobs(&self.context_id, prefix))
    }
}
