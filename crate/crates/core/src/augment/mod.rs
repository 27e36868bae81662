//! Hallucinated-caption augmentation.
//!
//! For each clip one reference caption is drawn, paraphrased (the clean
//! datapoint) and rewritten with three acoustically dissimilar tags taken
//! from low ranks of the clip's tagger output (the hallucinated datapoint).

mod llm;
mod template;

use std::io::BufRead;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use llm::{complete_with_retry, HttpLlm, HttpLlmConfig, LlmClient, MockLlm, RetryPolicy};
pub use template::{
    one_line, parse_fewshots, render, render_fewshots, Fewshot, PromptSet, DEFAULT_FEWSHOTS, DEFAULT_INJECT,
    DEFAULT_PARAPHRASE, TAG_SEPARATOR,
};

use crate::error::{Error, Result};

pub const TAGS_TO_INJECT: usize = 3;

/// Inclusive, 1-indexed rank band tags are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRange {
    pub first: usize,
    pub last: usize,
}

impl Default for RankRange {
    fn default() -> Self {
        Self { first: 30, last: 40 }
    }
}

impl RankRange {
    pub fn contains(&self, rank: usize) -> bool {
        (self.first..=self.last).contains(&rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTag {
    pub tag: String,
    pub score: f64,
}

/// Tagger output for one clip, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedTagList {
    context_id: String,
    tags: Vec<ScoredTag>,
}

impl RankedTagList {
    /// Accepts tags sorted by non-increasing score; equal scores are
    /// ordered by tag string so the ranking is total.
    pub fn new(context_id: impl Into<String>, mut tags: Vec<ScoredTag>) -> Result<Self> {
        if tags.iter().any(|t| !t.score.is_finite()) {
            return Err(Error::Precondition("tag scores must be finite".into()));
        }
        if tags.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::Precondition("tags must be sorted by descending score".into()));
        }
        tags.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tag.cmp(&b.tag)));
        Ok(Self {
            context_id: context_id.into(),
            tags,
        })
    }

    pub fn context_id(&self) -> &str {
        &self.context_id
    }

    pub fn tags(&self) -> &[ScoredTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// 1-indexed rank of `tag`, if present.
    pub fn rank_of(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t.tag == tag).map(|i| i + 1)
    }
}

/// Draws three distinct tags uniformly from ranks 30..=40 (1-indexed).
pub fn select_dissimilar_tags(tags: &RankedTagList, seed: u64) -> Result<Vec<String>> {
    select_tags_in_range(tags, seed, RankRange::default())
}

pub fn select_tags_in_range(tags: &RankedTagList, seed: u64, range: RankRange) -> Result<Vec<String>> {
    let band = range.last + 1 - range.first;
    if range.first == 0 || range.last < range.first || band < TAGS_TO_INJECT {
        return Err(Error::config("rank_range", format!("{}..={} cannot supply {TAGS_TO_INJECT} tags", range.first, range.last)));
    }
    if tags.len() < range.last {
        return Err(Error::TooFewTags {
            found: tags.len(),
            required: range.last,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = index::sample(&mut rng, band, TAGS_TO_INJECT).into_vec();
    offsets.sort_unstable();
    Ok(offsets
        .into_iter()
        .map(|o| tags.tags[range.first - 1 + o].tag.clone())
        .collect())
}

/// Derives an independent seed for `parts` from a run seed, stable across
/// platforms and thread counts.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Hex SHA-256 over the length-prefixed prompts.
pub fn prompt_fingerprint(prompts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in prompts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

fn first_line(response: &str) -> Result<String> {
    response
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or(Error::EmptyResponse)
}

/// Prompting side of the pipeline: an LLM client plus templates.
pub struct Augmenter<C> {
    llm: C,
    prompts: PromptSet,
    retry: RetryPolicy,
    range: RankRange,
}

impl<C: LlmClient> Augmenter<C> {
    pub fn new(llm: C, prompts: PromptSet) -> Self {
        Self {
            llm,
            prompts,
            retry: RetryPolicy::default(),
            range: RankRange::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rank_range(mut self, range: RankRange) -> Self {
        self.range = range;
        self
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    /// Clean datapoint: a one-line paraphrase of `caption`.
    pub fn paraphrase(&self, caption: &str) -> Result<String> {
        if caption.trim().is_empty() {
            return Err(Error::Precondition("caption to paraphrase is empty".into()));
        }
        let prompt = self.prompts.paraphrase_prompt(caption)?;
        let (text, _) = complete_with_retry(&self.llm, &prompt, self.retry)?;
        first_line(&text)
    }

    /// Hallucinated datapoint: `caption` rewritten to mention `tags`.
    pub fn inject_tags(&self, caption: &str, tags: &[String], fewshots: &[Fewshot]) -> Result<String> {
        if tags.len() != TAGS_TO_INJECT {
            return Err(Error::Precondition(format!(
                "exactly {TAGS_TO_INJECT} tags required, got {}",
                tags.len()
            )));
        }
        if fewshots.is_empty() {
            return Err(Error::Precondition("at least one fewshot example required".into()));
        }
        let prompt = self.prompts.inject_prompt(caption, tags, fewshots)?;
        let (text, _) = complete_with_retry(&self.llm, &prompt, self.retry)?;
        first_line(&text)
    }

    fn augment_row(&self, row: &DatasetRow, run_seed: u64) -> Result<AugmentRecord> {
        let seed = derive_seed(run_seed, &[&row.context_id]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let original = &row.captions[rng.random_range(0..row.captions.len())];
        let tags = RankedTagList::new(&row.context_id, row.tags.clone())?;
        let injected = select_tags_in_range(&tags, rng.random(), self.range)?;

        let para_prompt = self.prompts.paraphrase_prompt(original)?;
        let inject_prompt = self
            .prompts
            .inject_prompt(original, &injected, &self.prompts.fewshots)?;
        let paraphrase = self.paraphrase(original)?;
        let hallucinated = self.inject_tags(original, &injected, &self.prompts.fewshots)?;
        Ok(AugmentRecord {
            context_id: row.context_id.clone(),
            original_caption: original.clone(),
            paraphrase,
            injected_tags: injected,
            hallucinated_caption: hallucinated,
            prompt_fingerprint: prompt_fingerprint(&[&para_prompt, &inject_prompt]),
            seed,
        })
    }
}

/// One input row of the augmentation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRow {
    pub context_id: String,
    pub captions: Vec<String>,
    pub tags: Vec<ScoredTag>,
}

/// A parsed row with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberedRow {
    pub line: usize,
    pub row: DatasetRow,
}

/// Reads dataset JSONL. Any malformed line aborts with its line number.
pub fn read_dataset(reader: impl BufRead, path: Option<&Path>) -> Result<Vec<NumberedRow>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if row.captions.is_empty() || row.captions.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::parse(path, lineno, "row needs at least one non-empty caption"));
        }
        if row.tags.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::parse(path, lineno, "tags are not sorted by descending score"));
        }
        if row.tags.iter().any(|t| !t.score.is_finite()) {
            return Err(Error::parse(path, lineno, "tag score is not finite"));
        }
        rows.push(NumberedRow { line: lineno, row });
    }
    Ok(rows)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<NumberedRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), Some(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub context_id: String,
    pub original_caption: String,
    pub paraphrase: String,
    pub injected_tags: Vec<String>,
    pub hallucinated_caption: String,
    pub prompt_fingerprint: String,
    pub seed: u64,
}

/// A row that could not be augmented, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub context_id: String,
    pub line: usize,
    pub reason: String,
    /// Whether the completion service, not the row, caused the failure.
    #[serde(skip)]
    pub service_failure: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentOutput {
    pub records: Vec<AugmentRecord>,
    pub quarantine: Vec<QuarantineRecord>,
}

/// Augments every row, `parallelism` rows at a time. Output keeps input
/// order; per-row failures are quarantined rather than aborting the run.
pub fn augment_dataset<C: LlmClient>(
    rows: &[NumberedRow],
    augmenter: &Augmenter<C>,
    seed: u64,
    parallelism: usize,
) -> Result<AugmentOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))?;
    let results: Vec<Result<AugmentRecord>> =
        pool.install(|| rows.par_iter().map(|r| augmenter.augment_row(&r.row, seed)).collect());

    let mut out = AugmentOutput::default();
    for (row, result) in rows.iter().zip(results) {
        match result {
            Ok(record) => out.records.push(record),
            Err(e) => {
                log::warn!("quarantined `{}` (line {}): {e}", row.row.context_id, row.line);
                out.quarantine.push(QuarantineRecord {
                    context_id: row.row.context_id.clone(),
                    line: row.line,
                    reason: e.to_string(),
                    service_failure: e.is_backend(),
                });
            }
        }
    }
    Ok(out)
}
