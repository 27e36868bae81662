use std::collections::HashMap;
use std::path::Path;

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::types::{normalize_text, EmbeddingVector};

/// Precomputed projections loaded from a text file.
///
/// Text lookups are exact matches on the normalized caption; a miss is an
/// error, never a nearest-neighbour guess.
#[derive(Debug, Clone, Default)]
pub struct FileEmbeddingStore {
    dim: usize,
    text: HashMap<String, EmbeddingVector>,
    audio: HashMap<String, EmbeddingVector>,
}

impl FileEmbeddingStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse(text, None)
    }

    fn parse(src: &str, path: Option<&Path>) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(path, line, msg);
        let mut store: Option<Self> = None;

        for (idx, raw) in src.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let Some(store) = store.as_mut() else {
                if keyword != "dim" {
                    return Err(err(lineno, "expected `dim <n>` header".into()));
                }
                let dim: usize = rest
                    .trim()
                    .parse()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| err(lineno, format!("invalid dimension `{}`", rest.trim())))?;
                store = Some(Self {
                    dim,
                    ..Self::default()
                });
                continue;
            };
            match keyword {
                "text" => {
                    let (nums, raw_text) = rest
                        .split_once('|')
                        .ok_or_else(|| err(lineno, "text entry needs `<floats> | <text>`".into()))?;
                    let key = normalize_text(raw_text);
                    let vector = parse_vector(nums, store.dim).map_err(|e| e.at(path, lineno))?;
                    if store.text.insert(key.clone(), vector).is_some() {
                        return Err(err(lineno, format!("duplicate text key `{key}`")));
                    }
                }
                "audio" => {
                    let (id, nums) = rest
                        .trim()
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| err(lineno, "audio entry needs `<context_id> <floats>`".into()))?;
                    let vector = parse_vector(nums, store.dim).map_err(|e| e.at(path, lineno))?;
                    if store.audio.insert(id.to_string(), vector).is_some() {
                        return Err(err(lineno, format!("duplicate audio key `{id}`")));
                    }
                }
                "dim" => return Err(err(lineno, "duplicate dim header".into())),
                other => return Err(err(lineno, format!("unknown directive `{other}`"))),
            }
        }
        store.ok_or_else(|| err(0, "missing `dim <n>` header".into()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn text_len(&self) -> usize {
        self.text.len()
    }

    pub fn audio_len(&self) -> usize {
        self.audio.len()
    }

    pub fn audio_entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.audio.iter().map(|(k, v)| (k.as_str(), v))
    }
}

enum VectorError {
    Dimension(usize, usize),
    Parse(String),
}

impl VectorError {
    fn at(self, path: Option<&Path>, line: usize) -> Error {
        match self {
            VectorError::Dimension(expected, found) => Error::Dimension { expected, found },
            VectorError::Parse(msg) => Error::parse(path, line, msg),
        }
    }
}

fn parse_vector(s: &str, dim: usize) -> std::result::Result<EmbeddingVector, VectorError> {
    let values = s
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| VectorError::Parse(format!("invalid float `{t}`"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != dim {
        return Err(VectorError::Dimension(dim, values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(VectorError::Parse("non-finite component".into()));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Err(VectorError::Parse("all-zero vector".into()));
    }
    EmbeddingVector::new(values).map_err(|e| VectorError::Parse(e.to_string()))
}

impl EmbeddingProvider for FileEmbeddingStore {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let key = normalize_text(text);
        self.text
            .get(&key)
            .cloned()
            .ok_or(Error::MissingEmbedding { kind: "text", key })
    }

    fn embed_audio(&self, context_id: &str) -> Result<EmbeddingVector> {
        self.audio.get(context_id).cloned().ok_or_else(|| Error::MissingEmbedding {
            kind: "audio",
            key: context_id.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STORE: &str = "\
dim 4
text 1 0 0 0 | Horse is  trotting.
text 0 1 0 0.5 | Someone is tapping on a surface.
audio clip1 0.9 0.1 0 0
";

    #[test]
    fn loads_entries() {
        let s = FileEmbeddingStore::parse_str(STORE).unwrap();
        assert_eq!((s.dim(), s.text_len(), s.audio_len()), (4, 2, 1));
        assert_eq!(s.embed_text("HORSE is trotting.").unwrap().values(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(s.embed_text("a cat"), Err(Error::MissingEmbedding { kind: "text", .. })));
        assert!(matches!(s.embed_audio("clip9"), Err(Error::MissingEmbedding { kind: "audio", .. })));
    }

    #[test]
    fn wrong_length_is_dimension_error() {
        let text = "dim 4\naudio c 1 2 3\n";
        assert!(matches!(
            FileEmbeddingStore::parse_str(text),
            Err(Error::Dimension { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn duplicate_key_names_key() {
        let text = format!("{STORE}text 0 0 1 0 | horse is trotting.\n");
        let e = FileEmbeddingStore::parse_str(&text).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 5, .. }));
        assert!(e.to_string().contains("horse is trotting."), "{e}");
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(
            FileEmbeddingStore::parse_str("dim 2\naudio c 0 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
