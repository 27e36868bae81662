use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{bleu1, clapscore_tt_metric, rouge_l, sentence_bleu1, sentence_rouge_l, ClapTtOptions, EvalInstance};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};

pub const BLEU1: &str = "bleu1";
pub const ROUGE_L: &str = "rouge_l";
pub const CLAPSCORE_TT: &str = "clapscore_tt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Hallucinated,
    NonHallucinated,
    None,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Hallucinated => "hallucinated",
            Split::NonHallucinated => "non-hallucinated",
            Split::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub context_id: String,
    pub candidate: String,
    pub scores: BTreeMap<String, f64>,
}

/// Corpus and per-instance scores of one caption set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub corpus: BTreeMap<String, f64>,
    pub instances: Vec<InstanceScores>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split: {}", self.split.label());
        for (metric, score) in &self.corpus {
            let _ = writeln!(out, "{metric:<14} {score:.4}");
        }
        out
    }
}

/// Scores `instances` with BLEU-1, ROUGE-L and, when a provider is given,
/// CLAPScore_tt.
pub fn compute_report(
    instances: &[EvalInstance],
    provider: Option<&dyn EmbeddingProvider>,
    split: Split,
    options: ClapTtOptions,
) -> Result<MetricReport> {
    let mut corpus = BTreeMap::new();
    corpus.insert(BLEU1.to_string(), bleu1(instances)?);
    corpus.insert(ROUGE_L.to_string(), rouge_l(instances)?);
    let tt = match provider {
        Some(p) => {
            let scores = clapscore_tt_metric(p, instances, options)?;
            corpus.insert(CLAPSCORE_TT.to_string(), scores.corpus);
            Some(scores.per_instance)
        }
        None => None,
    };
    let instances = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut scores = BTreeMap::new();
            scores.insert(BLEU1.to_string(), sentence_bleu1(inst));
            scores.insert(ROUGE_L.to_string(), sentence_rouge_l(inst));
            if let Some(Some(s)) = tt.as_ref().map(|v| v[i]) {
                scores.insert(CLAPSCORE_TT.to_string(), s);
            }
            InstanceScores {
                context_id: inst.context_id.clone(),
                candidate: inst.candidate.clone(),
                scores,
            }
        })
        .collect();
    Ok(MetricReport {
        split,
        corpus,
        instances,
    })
}

/// Reports for a hallucinated and a clean caption set, with per-metric
/// deltas `non_hallucinated - hallucinated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub hallucinated: MetricReport,
    pub non_hallucinated: MetricReport,
    pub deltas: BTreeMap<String, f64>,
}

impl SplitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>14} {:>18} {:>10}", "metric", "hallucinated", "non-hallucinated", "delta");
        for (metric, delta) in &self.deltas {
            let _ = writeln!(
                out,
                "{metric:<14} {:>14.4} {:>18.4} {:>+10.4}",
                self.hallucinated.corpus[metric], self.non_hallucinated.corpus[metric], delta
            );
        }
        out
    }
}

pub fn split_report(
    hallucinated: &[EvalInstance],
    clean: &[EvalInstance],
    provider: Option<&dyn EmbeddingProvider>,
    options: ClapTtOptions,
) -> Result<SplitReport> {
    if hallucinated.is_empty() || clean.is_empty() {
        return Err(Error::Precondition("both splits need at least one instance".into()));
    }
    let h = compute_report(hallucinated, provider, Split::Hallucinated, options)?;
    let c = compute_report(clean, provider, Split::NonHallucinated, options)?;
    let deltas = c
        .corpus
        .iter()
        .map(|(k, v)| (k.clone(), v - h.corpus[k]))
        .collect();
    Ok(SplitReport {
        hallucinated: h,
        non_hallucinated: c,
        deltas,
    })
}
