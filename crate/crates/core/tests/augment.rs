use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use faithdec::augment::{
    augment_dataset, load_dataset, read_dataset, AugmentOutput, Augmenter, HttpLlm, HttpLlmConfig, LlmClient, MockLlm,
    NumberedRow, PromptSet, RankedTagList, RetryPolicy, ScoredTag, select_dissimilar_tags,
};
use faithdec::Error;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

const ROWS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/augment_rows.jsonl");
const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/augment_golden.jsonl");

fn to_jsonl(out: &AugmentOutput) -> String {
    out.records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

fn run_mock(rows: &[NumberedRow], seed: u64, parallelism: usize) -> AugmentOutput {
    augment_dataset(rows, &Augmenter::new(MockLlm, PromptSet::default()), seed, parallelism).unwrap()
}

#[test]
fn mock_run_matches_golden_file() {
    let rows = load_dataset(ROWS).unwrap();
    let got = to_jsonl(&run_mock(&rows, 42, 2));
    if std::env::var_os("FD_BLESS").is_some() {
        std::fs::write(GOLDEN, &got).unwrap();
    }
    assert_eq!(got, std::fs::read_to_string(GOLDEN).unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let rows = load_dataset(ROWS).unwrap();
    let first = to_jsonl(&run_mock(&rows, 7, 1));
    for parallelism in [1, 3, 8] {
        assert_eq!(to_jsonl(&run_mock(&rows, 7, parallelism)), first);
    }
    assert_ne!(to_jsonl(&run_mock(&rows, 8, 1)), first);
}

/// Row seed recomputed from its definition: first 8 bytes (LE) of
/// sha256(seed LE || len(id) LE || id).
fn oracle_row_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((id.len() as u64).to_le_bytes());
    h.update(id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[test]
fn records_are_consistent_with_their_rows() {
    let rows = load_dataset(ROWS).unwrap();
    let out = run_mock(&rows, 42, 4);
    assert!(out.quarantine.is_empty());
    assert_eq!(out.records.len(), 3);
    for (row, rec) in rows.iter().zip(&out.records) {
        let row = &row.row;
        assert_eq!(rec.context_id, row.context_id);
        assert_eq!(rec.seed, oracle_row_seed(42, &row.context_id));
        assert!(row.captions.contains(&rec.original_caption));
        assert_eq!(rec.paraphrase, format!("[PARA] {}", rec.original_caption));
        assert_eq!(rec.hallucinated_caption, format!("{} | {}", rec.original_caption, rec.injected_tags.join("; ")));
        assert_eq!(rec.injected_tags.len(), 3);
        for tag in &rec.injected_tags {
            let rank = row.tags.iter().position(|t| &t.tag == tag).unwrap() + 1;
            assert!((30..=40).contains(&rank), "{tag} at rank {rank}");
        }
        assert_eq!(rec.prompt_fingerprint.len(), 64);
    }
}

fn tags_from_scores(scores: &[u16]) -> Vec<ScoredTag> {
    let mut scores = scores.to_vec();
    scores.sort_unstable_by(|a, b| b.cmp(a));
    scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| ScoredTag {
            tag: format!("t{i}"),
            score: f64::from(s) / 1000.0,
        })
        .collect()
}

proptest! {
    #[test]
    fn picked_tags_come_from_the_dissimilar_band(scores in prop::collection::vec(0u16..1000, 40..80), seed in any::<u64>()) {
        let list = RankedTagList::new("clip", tags_from_scores(&scores)).unwrap();
        let picked = select_dissimilar_tags(&list, seed).unwrap();
        prop_assert_eq!(picked.len(), 3);
        let mut ranks: Vec<usize> = picked.iter().map(|t| list.rank_of(t).unwrap()).collect();
        prop_assert!(ranks.iter().all(|r| (30..=40).contains(r)));
        ranks.sort_unstable();
        ranks.dedup();
        prop_assert_eq!(ranks.len(), 3);
        prop_assert_eq!(select_dissimilar_tags(&list, seed).unwrap(), picked);
    }
}

#[test]
fn every_band_member_gets_picked() {
    let list = RankedTagList::new("clip", tags_from_scores(&[500; 45])).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..500 {
        for tag in select_dissimilar_tags(&list, seed).unwrap() {
            seen.insert(list.rank_of(&tag).unwrap());
        }
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), (30..=40).collect::<Vec<_>>());
}

#[test]
fn malformed_line_is_reported_with_its_number() {
    let good = std::fs::read_to_string(ROWS).unwrap();
    let mut lines: Vec<&str> = good.lines().collect();
    lines.insert(2, "{\"context_id\": \"x\", \"captions\": [");
    let err = read_dataset(lines.join("\n").as_bytes(), None).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

    let unknown = "{\"context_id\":\"x\",\"captions\":[\"a\"],\"tags\":[],\"extra\":1}";
    assert!(matches!(read_dataset(unknown.as_bytes(), None), Err(Error::Parse { line: 1, .. })));
    let unsorted = "\n{\"context_id\":\"x\",\"captions\":[\"a\"],\"tags\":[{\"tag\":\"a\",\"score\":0.1},{\"tag\":\"b\",\"score\":0.2}]}";
    assert!(matches!(read_dataset(unsorted.as_bytes(), None), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn short_tag_lists_are_quarantined() {
    let mut rows = load_dataset(ROWS).unwrap();
    rows[1].row.tags.truncate(35);
    let out = run_mock(&rows, 42, 2);
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.quarantine.len(), 1);
    let q = &out.quarantine[0];
    assert_eq!((q.context_id.as_str(), q.line), ("YclipB", 2));
    assert!(!q.service_failure);
    assert!(q.reason.contains("35"), "{}", q.reason);
}

struct Broken;

impl LlmClient for Broken {
    fn complete(&self, _: &str) -> faithdec::Result<String> {
        Err(Error::Service("down".into()))
    }
}

#[test]
fn service_failures_are_flagged() {
    let rows = load_dataset(ROWS).unwrap();
    let retry = RetryPolicy {
        max_attempts: 2,
        base_delay: Duration::from_millis(1),
    };
    let aug = Augmenter::new(Broken, PromptSet::default()).with_retry(retry);
    let out = augment_dataset(&rows, &aug, 1, 2).unwrap();
    assert!(out.records.is_empty());
    assert!(out.quarantine.iter().all(|q| q.service_failure));
}

#[test]
fn fingerprint_tracks_the_templates() {
    let rows = load_dataset(ROWS).unwrap();
    let base = run_mock(&rows, 3, 1);
    let mut prompts = PromptSet::default();
    prompts.paraphrase = format!("Please. {}", prompts.paraphrase);
    let changed = augment_dataset(&rows, &Augmenter::new(MockLlm, prompts), 3, 1).unwrap();
    for (a, b) in base.records.iter().zip(&changed.records) {
        assert_eq!(a.injected_tags, b.injected_tags);
        assert_ne!(a.prompt_fingerprint, b.prompt_fingerprint);
    }
}

/// Minimal HTTP/1.1 server: fails the first `failures` requests with 503,
/// then answers `{"text": ...}` echoing the prompt's last line.
fn completion_server(failures: usize) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, payload) = if n < failures {
                ("503 Service Unavailable", "{}".to_string())
            } else {
                let prompt = req["prompt"].as_str().unwrap();
                let last = prompt.lines().rev().find(|l| !l.trim().is_empty()).unwrap();
                assert_eq!(req["model"], "tiny");
                (
                    "200 OK",
                    serde_json::json!({ "text": format!("\n{last}\nignored") }).to_string(),
                )
            };
            let resp = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/complete"), hits)
}

fn http_llm(endpoint: String) -> HttpLlm {
    HttpLlm::new(HttpLlmConfig {
        endpoint,
        model: "tiny".into(),
        timeout_secs: 5,
        ..HttpLlmConfig::default()
    })
}

#[test]
fn http_client_retries_transient_failures() {
    let (endpoint, hits) = completion_server(2);
    let retry = RetryPolicy {
        max_attempts: 3,
        base_delay: Duration::from_millis(5),
    };
    let aug = Augmenter::new(http_llm(endpoint), PromptSet::default()).with_retry(retry);
    let text = aug.paraphrase("A horse trots").unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    // The reply is the first non-empty line of the completion.
    assert!(!text.is_empty() && !text.contains("ignored"), "{text}");
}

#[test]
fn http_client_gives_up_after_max_attempts() {
    let (endpoint, hits) = completion_server(usize::MAX);
    let retry = RetryPolicy {
        max_attempts: 2,
        base_delay: Duration::from_millis(1),
    };
    let aug = Augmenter::new(http_llm(endpoint), PromptSet::default()).with_retry(retry);
    let err = aug.paraphrase("A horse trots").unwrap_err();
    assert!(err.is_backend(), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}
