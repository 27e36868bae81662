//! Shared audio-text embedding providers and cosine-based scores.

mod bow;
mod remote;
mod store;

pub use bow::BagOfWordsOracle;
pub use remote::RemoteEmbeddings;
pub use store::FileEmbeddingStore;

use crate::error::{Error, Result};
use crate::types::{normalize_text, EmbeddingVector};

/// Projects texts and audio clips into one shared space.
///
/// `embed_text` receives text that has already been through
/// [`normalize_text`].
pub trait EmbeddingProvider: Send + Sync {
    /// Dimension of returned vectors, if known before the first call.
    fn dim(&self) -> Option<usize>;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;
    fn embed_audio(&self, context_id: &str) -> Result<EmbeddingVector>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed_text(text)
    }
    fn embed_audio(&self, context_id: &str) -> Result<EmbeddingVector> {
        (**self).embed_audio(context_id)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed_text(text)
    }
    fn embed_audio(&self, context_id: &str) -> Result<EmbeddingVector> {
        (**self).embed_audio(context_id)
    }
}

/// Cosine of the angle between `x` and `y`, clamped to `[-1, 1]`.
pub fn cosine_similarity(x: &EmbeddingVector, y: &EmbeddingVector) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    if x.is_zero() || y.is_zero() {
        return Err(Error::ZeroVector);
    }
    let (xs, ys) = (x.values(), y.values());
    let dot: f64 = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
    let nx = xs.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = ys.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// Audio-text score: similarity between a clip and a caption.
pub fn clap_score_at<P: EmbeddingProvider + ?Sized>(provider: &P, text: &str, context_id: &str) -> Result<f64> {
    let audio = provider.embed_audio(context_id)?;
    let text = provider.embed_text(&normalize_text(text))?;
    cosine_similarity(&audio, &text)
}

/// Text-text score between two captions.
pub fn clap_score_tt<P: EmbeddingProvider + ?Sized>(provider: &P, a: &str, b: &str) -> Result<f64> {
    let a = provider.embed_text(&normalize_text(a))?;
    let b = provider.embed_text(&normalize_text(b))?;
    cosine_similarity(&a, &b)
}
