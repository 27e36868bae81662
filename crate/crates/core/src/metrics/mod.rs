//! Caption evaluation: BLEU-1, ROUGE-L and embedding-space CLAPScore_tt,
//! with per-split reports for hallucinated versus clean caption sets.

mod ngram;
mod report;

use serde::{Deserialize, Serialize};

pub use ngram::{
    bleu1, lcs_len, rouge_l, sentence_bleu1, sentence_rouge_l, unigram_stats, UnigramStats, ROUGE_BETA,
};
pub use report::{compute_report, split_report, InstanceScores, MetricReport, Split, SplitReport};

use crate::embedding::{clap_score_tt, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::types::normalize_text;

/// One candidate caption with its human references, all normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub context_id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

impl EvalInstance {
    pub fn new(context_id: impl Into<String>, candidate: &str, references: Vec<String>) -> Result<Self> {
        let context_id = context_id.into();
        if references.is_empty() {
            return Err(Error::Precondition(format!("instance `{context_id}` has no references")));
        }
        Ok(Self {
            context_id,
            candidate: normalize_text(candidate),
            references: references.iter().map(|r| normalize_text(r)).collect(),
        })
    }
}

/// How multiple references collapse into one instance score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefAggregate {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClapTtOptions {
    pub aggregate: RefAggregate,
    /// Drop instances whose embeddings are missing instead of failing.
    pub skip_missing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClapTtScores {
    pub corpus: f64,
    /// `None` for excluded instances.
    pub per_instance: Vec<Option<f64>>,
    pub excluded: Vec<(String, String)>,
}

fn tt_or_neutral<P: EmbeddingProvider + ?Sized>(provider: &P, a: &str, b: &str) -> Result<f64> {
    match clap_score_tt(provider, a, b) {
        Err(Error::ZeroVector) => Ok(0.0),
        other => other,
    }
}

fn instance_tt<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    instance: &EvalInstance,
    aggregate: RefAggregate,
) -> Result<f64> {
    let scores = instance
        .references
        .iter()
        .map(|r| tt_or_neutral(provider, &instance.candidate, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(match aggregate {
        RefAggregate::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        RefAggregate::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

/// Corpus CLAPScore_tt: mean over instances of the reference-aggregated
/// text-text similarity.
pub fn clapscore_tt_metric<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    instances: &[EvalInstance],
    options: ClapTtOptions,
) -> Result<ClapTtScores> {
    if instances.is_empty() {
        return Err(Error::Precondition("clapscore_tt needs at least one instance".into()));
    }
    let mut per_instance = Vec::with_capacity(instances.len());
    let mut excluded = Vec::new();
    for inst in instances {
        match instance_tt(provider, inst, options.aggregate) {
            Ok(s) => per_instance.push(Some(s)),
            Err(e @ Error::MissingEmbedding { .. }) if options.skip_missing => {
                log::warn!("excluding `{}` from clapscore_tt: {e}", inst.context_id);
                excluded.push((inst.context_id.clone(), e.to_string()));
                per_instance.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let kept: Vec<f64> = per_instance.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Precondition("every instance was excluded from clapscore_tt".into()));
    }
    Ok(ClapTtScores {
        corpus: kept.iter().sum::<f64>() / kept.len() as f64,
        per_instance,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{BagOfWordsOracle, FileEmbeddingStore};
    use crate::types::{TokenId, VocabInfo};

    fn oracle() -> BagOfWordsOracle {
        let words = ["<s>", "</s>", "dog", "barks", "rain", "falls"];
        let vocab = VocabInfo::new(TokenId(0), TokenId(1), words.iter().map(|s| s.to_string()).collect()).unwrap();
        BagOfWordsOracle::new(vocab)
    }

    fn inst(c: &str, refs: &[&str]) -> EvalInstance {
        EvalInstance::new(c, c, refs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn exact_match_scores_one() {
        let s = clapscore_tt_metric(&oracle(), &[inst("dog barks", &["rain", "dog barks"])], Default::default()).unwrap();
        assert!((s.corpus - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_scores_zero_and_mean_of_two() {
        let o = oracle();
        let s = clapscore_tt_metric(&o, &[inst("dog barks", &["rain falls"])], Default::default()).unwrap();
        assert_eq!(s.corpus, 0.0);
        let s = clapscore_tt_metric(
            &o,
            &[inst("dog", &["dog"]), inst("rain", &["falls"])],
            Default::default(),
        )
        .unwrap();
        assert!((s.corpus - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_aggregate() {
        let opts = ClapTtOptions {
            aggregate: RefAggregate::Mean,
            ..Default::default()
        };
        let s = clapscore_tt_metric(&oracle(), &[inst("dog", &["dog", "rain"])], opts).unwrap();
        assert!((s.corpus - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_embedding_is_loud_unless_skipped() {
        let store = FileEmbeddingStore::parse_str("dim 2\ntext 1 0 | dog barks\n").unwrap();
        let set = [inst("dog barks", &["dog barks"]), inst("cat", &["dog barks"])];
        assert!(matches!(
            clapscore_tt_metric(&store, &set, Default::default()),
            Err(Error::MissingEmbedding { .. })
        ));
        let opts = ClapTtOptions {
            skip_missing: true,
            ..Default::default()
        };
        let s = clapscore_tt_metric(&store, &set, opts).unwrap();
        assert_eq!(s.per_instance, vec![Some(1.0), None]);
        assert_eq!(s.excluded.len(), 1);
        assert_eq!(s.corpus, 1.0);
    }

    #[test]
    fn instance_requires_references() {
        assert!(EvalInstance::new("x", "a", vec![]).is_err());
        assert_eq!(EvalInstance::new("x", " A  b", vec!["C".into()]).unwrap().candidate, "a b");
    }
}
