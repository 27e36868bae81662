use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{parse_alpha_list, Backend, BackendSpec, DecoderKind, EmbeddingSpec, LlmSpec, OutputFormat, RunConfig};
use super::{AugmentArgs, Cli, CliError, Command, CommonArgs, CompareArgs, DecodeArgs, EvalArgs};
use super::{EXIT_BACKEND, EXIT_OK, EXIT_PARTIAL};
use crate::augment::{augment_dataset, load_dataset, Augmenter, HttpLlm, HttpLlmConfig, LlmClient, MockLlm, PromptSet, RetryPolicy};
use crate::decoder::{faithful_beam_search, standard_beam_search, NBestList};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::metrics::{compute_report, split_report, ClapTtOptions, EvalInstance, MetricReport, RefAggregate, Split};
use crate::types::{validate_config, DecodeConfig};

type CliResult<T> = std::result::Result<T, CliError>;

pub(super) fn dispatch(cli: Cli) -> CliResult<u8> {
    let file = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let common = Common::merge(&cli.common, &file);
    match cli.command {
        Command::Decode(args) => run_decode(&common, &file, &args),
        Command::Compare(args) => run_compare(&common, &file, &args),
        Command::Eval(args) => run_eval(&common, &file, &args),
        Command::Augment(args) => run_augment(&common, &file, &args),
        Command::Selftest => run_selftest(&common),
    }
}

/// Common settings after flags have been laid over the config file.
struct Common {
    seed: u64,
    alphas: Option<String>,
    backend: Option<String>,
    embeddings: Option<String>,
    out: Option<PathBuf>,
    format: OutputFormat,
}

impl Common {
    fn merge(flags: &CommonArgs, file: &RunConfig) -> Self {
        Self {
            seed: flags.seed.or(file.seed).unwrap_or(0),
            alphas: flags.alpha.clone(),
            backend: flags.backend.clone().or_else(|| file.backend.clone()),
            embeddings: flags.embeddings.clone().or_else(|| file.embeddings.clone()),
            out: flags.out.clone().or_else(|| file.out.clone()),
            format: flags.format.or(file.format).unwrap_or_default(),
        }
    }

    fn open_backend(&self) -> Result<Backend> {
        let spec = self
            .backend
            .as_deref()
            .ok_or_else(|| Error::config("backend", "no backend given (use --backend)"))?;
        Backend::open(&BackendSpec::parse(spec)?)
    }

    fn open_embeddings(&self, backend: Option<&Backend>) -> Result<Option<Box<dyn EmbeddingProvider>>> {
        match &self.embeddings {
            None => Ok(None),
            Some(spec) => EmbeddingSpec::parse(spec)?
                .open(backend.and_then(Backend::vocab))
                .map(Some),
        }
    }

    fn write_output(&self, text: &str) -> Result<()> {
        write_to(self.out.as_deref(), text)
    }
}

fn write_to(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn require_file(field: &'static str, path: Option<&PathBuf>) -> Result<PathBuf> {
    let path = path.ok_or_else(|| Error::config(field, "required path not given"))?;
    if !path.exists() {
        return Err(Error::config(field, format!("file not found: {}", path.display())));
    }
    Ok(path.clone())
}

/// Parses every non-blank line of a JSONL file as `T`.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::parse(Some(path), i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serialization is infallible"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Deserialize)]
struct DecodeRow {
    context_id: String,
}

/// One line of decode output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeLine {
    pub context_id: String,
    pub caption: String,
    pub score: f64,
    pub alpha: Option<f64>,
    pub decoder: String,
}

#[derive(Debug, Serialize)]
struct DecodeFailure {
    context_id: String,
    line: usize,
    alpha: Option<f64>,
    reason: String,
}

fn run_decode(common: &Common, file: &RunConfig, args: &DecodeArgs) -> CliResult<u8> {
    let sect = &file.decode;
    let dataset = require_file("dataset", args.dataset.as_ref().or(sect.dataset.as_ref()))?;
    let decoder = args.decoder.or(sect.decoder).unwrap_or_default();
    let alphas = match (&common.alphas, &sect.alphas) {
        (Some(list), _) => parse_alpha_list(list)?,
        (None, Some(list)) if list.is_empty() => return Err(Error::config("alpha", "alpha list is empty").into()),
        (None, Some(list)) => list.clone(),
        (None, None) => vec![DecodeConfig::default().alpha],
    };
    let defaults = DecodeConfig::default();
    let base = DecodeConfig {
        beam_width: args.beam_width.or(sect.beam_width).unwrap_or(defaults.beam_width),
        max_len: args.max_len.or(sect.max_len).unwrap_or(defaults.max_len),
        rollout_max_len: args
            .rollout_max_len
            .or(sect.rollout_max_len)
            .unwrap_or(defaults.rollout_max_len),
        expansions_per_beam: args
            .expansions_per_beam
            .or(sect.expansions_per_beam)
            .unwrap_or(defaults.expansions_per_beam),
        n_best: args.n_best.or(sect.n_best).unwrap_or(defaults.n_best),
        seed: common.seed,
        alpha: defaults.alpha,
    };
    // The standard decoder ignores alpha, so a sweep collapses to one block.
    let sweep: Vec<Option<f64>> = match decoder {
        DecoderKind::Faithful => alphas.iter().copied().map(Some).collect(),
        DecoderKind::Beam => vec![None],
    };
    let configs = sweep
        .iter()
        .map(|a| {
            validate_config(DecodeConfig {
                alpha: a.unwrap_or(0.0),
                ..base.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let backend = common.open_backend()?;
    let provider = common.open_embeddings(Some(&backend))?;
    if decoder == DecoderKind::Faithful && provider.is_none() {
        return Err(Error::config("embeddings", "the faithful decoder needs an embedding provider (use --embeddings)").into());
    }
    let rows: Vec<(usize, DecodeRow)> = read_jsonl(&dataset)?;
    let lm = backend.as_lm();

    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (alpha, cfg) in sweep.iter().zip(&configs) {
        let results: Vec<Result<NBestList>> = rows
            .par_iter()
            .map(|(_, row)| {
                let session = lm.open_session(&row.context_id)?;
                let nbest = match (decoder, provider.as_deref()) {
                    (DecoderKind::Faithful, Some(p)) => faithful_beam_search(&session, p, &row.context_id, cfg)?,
                    _ => standard_beam_search(&session, cfg)?,
                };
                if nbest.is_empty() {
                    return Err(Error::Precondition("model admits no complete caption".into()));
                }
                Ok(nbest)
            })
            .collect();
        for ((lineno, row), result) in rows.iter().zip(results) {
            match result {
                Ok(nbest) => lines.extend(nbest.hypotheses.iter().map(|h| DecodeLine {
                    context_id: row.context_id.clone(),
                    caption: h.caption.clone(),
                    score: h.score,
                    alpha: *alpha,
                    decoder: decoder.label().to_string(),
                })),
                Err(e @ Error::BackendUnavailable(_)) => return Err(e.into()),
                Err(e) => {
                    log::warn!("row `{}` (line {lineno}) failed: {e}", row.context_id);
                    failures.push(DecodeFailure {
                        context_id: row.context_id.clone(),
                        line: *lineno,
                        alpha: *alpha,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
    if !rows.is_empty() && lines.is_empty() && !failures.is_empty() {
        return Err(CliError {
            code: EXIT_BACKEND,
            message: format!("every row failed; first: {}", failures[0].reason),
        });
    }
    common.write_output(&to_jsonl(&lines))?;
    finish_with_quarantine(common.out.as_deref(), None, &failures)
}

fn quarantine_path(out: Option<&Path>, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        out.map(|o| {
            let mut name = o.as_os_str().to_os_string();
            name.push(".quarantine.jsonl");
            PathBuf::from(name)
        })
    })
}

fn finish_with_quarantine<T: Serialize>(out: Option<&Path>, explicit: Option<&Path>, failures: &[T]) -> CliResult<u8> {
    if failures.is_empty() {
        return Ok(EXIT_OK);
    }
    match quarantine_path(out, explicit) {
        Some(path) => write_to(Some(&path), &to_jsonl(failures))?,
        None => eprint!("{}", to_jsonl(failures)),
    }
    eprintln!("{} row(s) quarantined", failures.len());
    Ok(EXIT_PARTIAL)
}

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    context_id: String,
    captions: Vec<String>,
}

fn load_references(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut refs = BTreeMap::new();
    for (line, row) in read_jsonl::<ReferenceRow>(path)? {
        if refs.insert(row.context_id.clone(), row.captions).is_some() {
            return Err(Error::parse(Some(path), line, format!("duplicate context_id `{}`", row.context_id)));
        }
    }
    Ok(refs)
}

/// Reads a decode output keeping the best caption per clip.
fn load_candidates(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut seen_alpha: HashMap<String, Option<f64>> = HashMap::new();
    for (line, row) in read_jsonl::<DecodeLine>(path)? {
        match seen_alpha.get(&row.context_id) {
            // Further n-best entries of the same block.
            Some(a) if *a == row.alpha => continue,
            Some(_) => {
                return Err(Error::parse(
                    Some(path),
                    line,
                    "file holds several alpha blocks; split it before scoring",
                ))
            }
            None => {
                seen_alpha.insert(row.context_id.clone(), row.alpha);
                out.insert(row.context_id, row.caption);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::config("candidates", format!("{} has no captions", path.display())));
    }
    Ok(out)
}

fn instances_for(candidates: &BTreeMap<String, String>, refs: &BTreeMap<String, Vec<String>>) -> Result<Vec<EvalInstance>> {
    candidates
        .iter()
        .map(|(id, caption)| {
            let r = refs
                .get(id)
                .ok_or_else(|| Error::config("references", format!("no references for `{id}`")))?;
            EvalInstance::new(id.clone(), caption, r.clone())
        })
        .collect()
}

fn clap_options(aggregate: Option<RefAggregate>, skip_missing: bool) -> ClapTtOptions {
    ClapTtOptions {
        aggregate: aggregate.unwrap_or_default(),
        skip_missing,
    }
}

/// Two scored runs plus per-metric deltas `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: MetricReport,
    pub b: MetricReport,
    pub deltas: BTreeMap<String, f64>,
}

impl ComparisonReport {
    pub fn to_table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>10} {:>10} {:>10}", "metric", "a", "b", "delta");
        for (metric, delta) in &self.deltas {
            let _ = writeln!(
                out,
                "{metric:<14} {:>10.4} {:>10.4} {:>+10.4}",
                self.a.corpus[metric], self.b.corpus[metric], delta
            );
        }
        out
    }
}

fn run_compare(common: &Common, file: &RunConfig, args: &CompareArgs) -> CliResult<u8> {
    let refs_path = require_file("references", args.references.as_ref().or(file.eval.references.as_ref()))?;
    let a = load_candidates(&args.a)?;
    let b = load_candidates(&args.b)?;
    let ids_a: BTreeSet<&String> = a.keys().collect();
    let ids_b: BTreeSet<&String> = b.keys().collect();
    if ids_a != ids_b {
        let only_a: Vec<&str> = ids_a.difference(&ids_b).map(|s| s.as_str()).collect();
        let only_b: Vec<&str> = ids_b.difference(&ids_a).map(|s| s.as_str()).collect();
        return Err(CliError::config(format!(
            "context_id sets differ; only in a: [{}]; only in b: [{}]",
            only_a.join(", "),
            only_b.join(", ")
        )));
    }
    let refs = load_references(&refs_path)?;
    let backend = match &common.backend {
        Some(_) => Some(common.open_backend()?),
        None => None,
    };
    let provider = common.open_embeddings(backend.as_ref())?;
    let opts = clap_options(args.ref_aggregate.map(Into::into).or(file.eval.ref_aggregate), false);
    let report_a = compute_report(&instances_for(&a, &refs)?, provider.as_deref(), Split::None, opts)?;
    let report_b = compute_report(&instances_for(&b, &refs)?, provider.as_deref(), Split::None, opts)?;
    let deltas = report_a
        .corpus
        .iter()
        .map(|(k, va)| (k.clone(), report_b.corpus[k] - va))
        .collect();
    let report = ComparisonReport {
        a: report_a,
        b: report_b,
        deltas,
    };
    let text = match common.format {
        OutputFormat::Json => serde_json::to_string_pretty(&report).expect("report serialization is infallible") + "\n",
        OutputFormat::Table => report.to_table(),
    };
    common.write_output(&text)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRow {
    context_id: String,
    candidate: String,
    references: Vec<String>,
    #[serde(default)]
    split: Option<Split>,
}

fn run_eval(common: &Common, file: &RunConfig, args: &EvalArgs) -> CliResult<u8> {
    let sect = &file.eval;
    let labelled: Vec<(Split, EvalInstance)> = match (args.instances.as_ref().or(sect.instances.as_ref()), args.candidates.as_ref().or(sect.candidates.as_ref())) {
        (Some(path), _) => {
            let path = require_file("instances", Some(path))?;
            read_jsonl::<InstanceRow>(&path)?
                .into_iter()
                .map(|(line, r)| {
                    EvalInstance::new(r.context_id, &r.candidate, r.references)
                        .map(|inst| (r.split.unwrap_or(Split::None), inst))
                        .map_err(|e| Error::parse(Some(&path), line, e.to_string()))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(cands)) => {
            let cands = require_file("candidates", Some(cands))?;
            let refs = require_file("references", args.references.as_ref().or(sect.references.as_ref()))?;
            let candidates = match load_candidates(&cands) {
                Err(Error::Config { field: "candidates", message }) => return Err(CliError::config(message)),
                other => other?,
            };
            instances_for(&candidates, &load_references(&refs)?)?
                .into_iter()
                .map(|i| (Split::None, i))
                .collect()
        }
        (None, None) => return Err(Error::config("instances", "give --instances or --candidates").into()),
    };
    if labelled.is_empty() {
        return Err(CliError::config("no instances to evaluate"));
    }
    let backend = match &common.backend {
        Some(_) => Some(common.open_backend()?),
        None => None,
    };
    let provider = common.open_embeddings(backend.as_ref())?;
    let opts = clap_options(
        args.ref_aggregate.map(Into::into).or(sect.ref_aggregate),
        args.skip_missing || sect.skip_missing.unwrap_or(false),
    );

    let split_of = |s: Split| -> Vec<EvalInstance> {
        labelled
            .iter()
            .filter(|(l, _)| *l == s)
            .map(|(_, i)| i.clone())
            .collect()
    };
    let has_splits = labelled.iter().any(|(s, _)| *s != Split::None);
    let text = if has_splits {
        if labelled.iter().any(|(s, _)| *s == Split::None) {
            return Err(CliError::config("either every instance has a split label or none does"));
        }
        let report = split_report(
            &split_of(Split::Hallucinated),
            &split_of(Split::NonHallucinated),
            provider.as_deref(),
            opts,
        )?;
        match common.format {
            OutputFormat::Json => report.to_json() + "\n",
            OutputFormat::Table => report.to_table(),
        }
    } else {
        let report = compute_report(&split_of(Split::None), provider.as_deref(), Split::None, opts)?;
        match common.format {
            OutputFormat::Json => report.to_json() + "\n",
            OutputFormat::Table => report.to_table(),
        }
    };
    common.write_output(&text)?;
    Ok(EXIT_OK)
}

fn llm_spec(common: &Common, file: &RunConfig, args: &AugmentArgs) -> Result<LlmSpec> {
    let sect = &file.augment;
    let name = args.llm.clone().or_else(|| sect.llm.clone()).unwrap_or_else(|| "mock".into());
    if name == "mock" {
        return Ok(LlmSpec::Mock);
    }
    if !(name.starts_with("http://") || name.starts_with("https://")) {
        return Err(Error::config("llm", format!("`{name}` is neither `mock` nor an http(s) URL")));
    }
    let _ = common;
    let defaults = HttpLlmConfig::default();
    Ok(LlmSpec::Http(HttpLlmConfig {
        endpoint: name,
        model: args.model.clone().or_else(|| sect.model.clone()).unwrap_or(defaults.model),
        temperature: args.temperature.or(sect.temperature).unwrap_or(defaults.temperature),
        max_tokens: sect.max_tokens.unwrap_or(defaults.max_tokens),
        timeout_secs: defaults.timeout_secs,
        min_interval_ms: sect.min_interval_ms.unwrap_or(defaults.min_interval_ms),
    }))
}

fn run_augment(common: &Common, file: &RunConfig, args: &AugmentArgs) -> CliResult<u8> {
    let sect = &file.augment;
    let dataset = require_file("dataset", args.dataset.as_ref().or(sect.dataset.as_ref()))?;
    let prompts = PromptSet::load(
        args.paraphrase_template.as_deref().or(sect.paraphrase_template.as_deref()),
        args.inject_template.as_deref().or(sect.inject_template.as_deref()),
        args.fewshots.as_deref().or(sect.fewshots.as_deref()),
    )?;
    let parallelism = args.parallelism.or(sect.parallelism).unwrap_or(1);
    if parallelism == 0 {
        return Err(Error::config("parallelism", "must be at least 1").into());
    }
    let retry = RetryPolicy {
        max_attempts: sect.max_attempts.unwrap_or(RetryPolicy::default().max_attempts),
        base_delay: Duration::from_millis(500),
    };
    let llm: Box<dyn LlmClient> = match llm_spec(common, file, args)? {
        LlmSpec::Mock => Box::new(MockLlm),
        LlmSpec::Http(cfg) => Box::new(HttpLlm::new(cfg)),
    };
    let rows = load_dataset(&dataset)?;
    if rows.is_empty() {
        return Err(CliError::config(format!("{} has no rows", dataset.display())));
    }
    let augmenter = Augmenter::new(llm, prompts).with_retry(retry);
    let output = augment_dataset(&rows, &augmenter, common.seed, parallelism)?;
    if output.records.is_empty() && output.quarantine.iter().all(|q| q.service_failure) {
        return Err(CliError {
            code: EXIT_BACKEND,
            message: format!("every row failed; first: {}", output.quarantine[0].reason),
        });
    }
    common.write_output(&to_jsonl(&output.records))?;
    let explicit = args.quarantine.as_deref().or(sect.quarantine.as_deref());
    finish_with_quarantine(common.out.as_deref(), explicit, &output.quarantine)
}

fn run_selftest(common: &Common) -> CliResult<u8> {
    let results = crate::selftest::run_all();
    let mut text = String::new();
    for r in &results {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    common.write_output(&text)?;
    Ok(if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}
