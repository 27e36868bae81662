use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use crate::augment::HttpLlmConfig;
use crate::embedding::{BagOfWordsOracle, EmbeddingProvider, FileEmbeddingStore, RemoteEmbeddings};
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, RemoteLm, TabularLm};
use crate::metrics::RefAggregate;
use crate::types::VocabInfo;

/// Declarative run manifest. Relative paths resolve against the file's
/// directory; command-line flags override every key.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub embeddings: Option<String>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub decode: DecodeSection,
    pub eval: EvalSection,
    pub augment: AugmentSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Faithful,
    Beam,
}

impl DecoderKind {
    pub fn label(self) -> &'static str {
        match self {
            DecoderKind::Faithful => "faithful",
            DecoderKind::Beam => "beam",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub dataset: Option<PathBuf>,
    pub decoder: Option<DecoderKind>,
    pub alphas: Option<Vec<f64>>,
    pub beam_width: Option<usize>,
    pub max_len: Option<usize>,
    pub rollout_max_len: Option<usize>,
    pub expansions_per_beam: Option<usize>,
    pub n_best: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub instances: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub ref_aggregate: Option<RefAggregate>,
    pub skip_missing: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub dataset: Option<PathBuf>,
    pub quarantine: Option<PathBuf>,
    /// `mock` or an HTTP endpoint URL.
    pub llm: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub max_attempts: Option<u32>,
    pub min_interval_ms: Option<u64>,
    pub parallelism: Option<usize>,
    pub paraphrase_template: Option<PathBuf>,
    pub inject_template: Option<PathBuf>,
    pub fewshots: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(Some(path), line, e.message().to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.out);
        fix(&mut self.decode.dataset);
        fix(&mut self.eval.instances);
        fix(&mut self.eval.candidates);
        fix(&mut self.eval.references);
        fix(&mut self.augment.dataset);
        fix(&mut self.augment.quarantine);
        fix(&mut self.augment.paraphrase_template);
        fix(&mut self.augment.inject_template);
        fix(&mut self.augment.fewshots);
        for spec in [&mut self.backend, &mut self.embeddings].into_iter().flatten() {
            if let Some((kind, rest)) = spec.split_once(':') {
                if matches!(kind, "tabular" | "store" | "bow") && Path::new(rest).is_relative() {
                    *spec = format!("{kind}:{}", base.join(rest).display());
                }
            }
        }
    }
}

/// Where next-token distributions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Tabular(PathBuf),
    Remote(String),
}

impl BackendSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.split_once(':') {
            Some(("tabular", path)) if !path.is_empty() => Ok(Self::Tabular(path.into())),
            Some(("tcp", addr)) if !addr.is_empty() => Ok(Self::Remote(addr.to_string())),
            _ => Err(Error::config("backend", format!("`{spec}` is not `tabular:PATH` or `tcp:HOST:PORT`"))),
        }
    }
}

/// A backend after loading.
pub enum Backend {
    Tabular(Arc<TabularLm>),
    Remote(RemoteLm),
}

impl Backend {
    pub fn open(spec: &BackendSpec) -> Result<Self> {
        match spec {
            BackendSpec::Tabular(path) => {
                if !path.exists() {
                    return Err(Error::config("backend", format!("file not found: {}", path.display())));
                }
                Ok(Self::Tabular(Arc::new(TabularLm::load(path)?)))
            }
            BackendSpec::Remote(addr) => Ok(Self::Remote(RemoteLm::new(addr.clone()))),
        }
    }

    pub fn as_lm(&self) -> &dyn LanguageModel {
        match self {
            Backend::Tabular(lm) => lm,
            Backend::Remote(lm) => lm,
        }
    }

    pub fn vocab(&self) -> Option<&VocabInfo> {
        match self {
            Backend::Tabular(lm) => Some(lm.vocab()),
            Backend::Remote(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSpec {
    Store(PathBuf),
    /// Bag-of-words oracle over the backend vocabulary, with audio vectors
    /// from an optional store file.
    BagOfWords(Option<PathBuf>),
    Remote(String),
}

impl EmbeddingSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.split_once(':') {
            None if spec == "bow" => Ok(Self::BagOfWords(None)),
            Some(("bow", path)) if !path.is_empty() => Ok(Self::BagOfWords(Some(path.into()))),
            Some(("store", path)) if !path.is_empty() => Ok(Self::Store(path.into())),
            Some(("tcp", addr)) if !addr.is_empty() => Ok(Self::Remote(addr.to_string())),
            _ => Err(Error::config(
                "embeddings",
                format!("`{spec}` is not `store:PATH`, `bow[:PATH]` or `tcp:HOST:PORT`"),
            )),
        }
    }

    pub fn open(&self, vocab: Option<&VocabInfo>) -> Result<Box<dyn EmbeddingProvider>> {
        let existing = |p: &PathBuf| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::config("embeddings", format!("file not found: {}", p.display())))
            }
        };
        match self {
            EmbeddingSpec::Store(path) => {
                existing(path)?;
                Ok(Box::new(FileEmbeddingStore::load(path)?))
            }
            EmbeddingSpec::BagOfWords(path) => {
                let vocab = vocab
                    .cloned()
                    .ok_or_else(|| Error::config("embeddings", "`bow` needs a tabular backend for its vocabulary"))?;
                match path {
                    Some(path) => {
                        existing(path)?;
                        let store = FileEmbeddingStore::load(path)?;
                        Ok(Box::new(BagOfWordsOracle::from_store(vocab, &store)?))
                    }
                    None => Ok(Box::new(BagOfWordsOracle::new(vocab))),
                }
            }
            EmbeddingSpec::Remote(addr) => Ok(Box::new(RemoteEmbeddings::connect(addr, Duration::from_secs(30))?)),
        }
    }
}

/// How augmentation talks to its completion service.
#[derive(Debug, Clone, PartialEq)]
pub enum LlmSpec {
    Mock,
    Http(HttpLlmConfig),
}

pub fn parse_alpha_list(s: &str) -> Result<Vec<f64>> {
    let alphas = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("alpha", format!("`{t}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if alphas.is_empty() {
        return Err(Error::config("alpha", "alpha list is empty"));
    }
    Ok(alphas)
}
