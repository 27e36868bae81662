use std::collections::HashMap;

use super::{EmbeddingProvider, FileEmbeddingStore};
use crate::error::{Error, Result};
use crate::types::{normalize_text, EmbeddingVector, VocabInfo};

/// Synthetic provider whose text projection is the L2-normalized
/// token-count vector of the caption, so similarities can be computed by
/// hand.
///
/// Words are matched against the normalized token strings of the
/// vocabulary; words outside it are ignored. Audio vectors are supplied
/// explicitly and must have one component per vocabulary entry.
#[derive(Debug, Clone)]
pub struct BagOfWordsOracle {
    vocab: VocabInfo,
    word_ids: HashMap<String, usize>,
    audio: HashMap<String, EmbeddingVector>,
}

impl BagOfWordsOracle {
    pub fn new(vocab: VocabInfo) -> Self {
        let mut word_ids = HashMap::new();
        for (i, s) in vocab.token_strings().iter().enumerate() {
            word_ids.entry(normalize_text(s)).or_insert(i);
        }
        Self {
            vocab,
            word_ids,
            audio: HashMap::new(),
        }
    }

    pub fn with_audio(mut self, context_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.insert_audio(context_id, EmbeddingVector::new(values)?)?;
        Ok(self)
    }

    pub fn insert_audio(&mut self, context_id: impl Into<String>, vector: EmbeddingVector) -> Result<()> {
        if vector.dim() != self.vocab.vocab_size() {
            return Err(Error::Dimension {
                expected: self.vocab.vocab_size(),
                found: vector.dim(),
            });
        }
        self.audio.insert(context_id.into(), vector);
        Ok(())
    }

    /// Takes the audio vectors of `store`, whose dimension must equal the
    /// vocabulary size. Text entries of the store are ignored.
    pub fn from_store(vocab: VocabInfo, store: &FileEmbeddingStore) -> Result<Self> {
        let mut oracle = Self::new(vocab);
        for (id, v) in store.audio_entries() {
            oracle.insert_audio(id, v.clone())?;
        }
        Ok(oracle)
    }

    pub fn vocab(&self) -> &VocabInfo {
        &self.vocab
    }

    /// Raw per-token counts of `text`.
    pub fn counts(&self, text: &str) -> Vec<u32> {
        let mut counts = vec![0u32; self.vocab.vocab_size()];
        for word in normalize_text(text).split(' ') {
            if let Some(&i) = self.word_ids.get(word) {
                counts[i] += 1;
            }
        }
        counts
    }
}

impl EmbeddingProvider for BagOfWordsOracle {
    fn dim(&self) -> Option<usize> {
        Some(self.vocab.vocab_size())
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let counts = self.counts(text);
        let norm = counts.iter().map(|&c| f64::from(c * c)).sum::<f64>().sqrt();
        let values = if norm == 0.0 {
            vec![0.0; counts.len()]
        } else {
            counts.iter().map(|&c| f64::from(c) / norm).collect()
        };
        EmbeddingVector::new(values)
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
    use crate::embedding::{clap_score_at, clap_score_tt};
    use crate::types::TokenId;

    fn oracle() -> BagOfWordsOracle {
        let vocab = VocabInfo::new(
            TokenId(3),
            TokenId(4),
            vec!["horse".into(), "trots".into(), "rain".into(), "<s>".into(), "</s>".into()],
        )
        .unwrap();
        BagOfWordsOracle::new(vocab)
            .with_audio("c", vec![1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap()
    }

    #[test]
    fn aligned_and_orthogonal_audio_scores() {
        let o = oracle();
        assert_eq!(clap_score_at(&o, "horse", "c").unwrap(), 1.0);
        assert_eq!(clap_score_at(&o, "trots", "c").unwrap(), 0.0);
        let mixed = clap_score_at(&o, "Horse trots", "c").unwrap();
        assert!((mixed - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-8);
    }

    #[test]
    fn text_text_scores() {
        let o = oracle();
        assert!((clap_score_tt(&o, "horse trots rain", "horse trots rain").unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(clap_score_tt(&o, "horse", "rain trots").unwrap(), 0.0);
    }

    #[test]
    fn unknown_words_are_ignored_and_empty_text_is_zero() {
        let o = oracle();
        assert_eq!(o.counts("horse galloping horse"), vec![2, 0, 0, 0, 0]);
        assert!(o.embed_text("").unwrap().is_zero());
        assert!(matches!(clap_score_at(&o, "", "c"), Err(Error::ZeroVector)));
    }

    #[test]
    fn audio_dimension_checked() {
        assert!(oracle().with_audio("d", vec![1.0]).is_err());
    }
}
