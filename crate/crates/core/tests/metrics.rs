mod common;

use common::{brute_bleu1, brute_lcs, brute_rouge_l, brute_unigram, cosine, random_corpus, to_instances, Corpus};
use faithdec::embedding::{BagOfWordsOracle, FileEmbeddingStore};
use faithdec::lm::TabularLm;
use faithdec::metrics::{
    bleu1, clapscore_tt_metric, compute_report, lcs_len, rouge_l, sentence_rouge_l, split_report, unigram_stats,
    ClapTtOptions, EvalInstance, RefAggregate, Split,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[test]
fn metrics_match_brute_force_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let corpus = random_corpus(&mut rng);
        let instances = to_instances(&corpus);
        for ((cand, refs), inst) in corpus.iter().zip(&instances) {
            let (m, c, r) = brute_unigram(cand, refs);
            let s = unigram_stats(inst);
            assert_eq!((s.clipped, s.candidate_len, s.reference_len), (m, c, r));
            for reference in refs {
                assert_eq!(lcs_len(cand, reference), brute_lcs(cand, reference));
            }
            assert_eq!(sentence_rouge_l(inst), brute_rouge_l(cand, refs));
        }
        assert_eq!(bleu1(&instances).unwrap(), brute_bleu1(&corpus));
        let mean = corpus.iter().map(|(c, r)| brute_rouge_l(c, r)).sum::<f64>() / corpus.len() as f64;
        assert_eq!(rouge_l(&instances).unwrap(), mean);
    }
}

#[test]
fn identical_corpora_score_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let corpus: Corpus = random_corpus(&mut rng)
            .into_iter()
            .map(|(c, _)| (c.clone(), vec![c]))
            .collect();
        let instances = to_instances(&corpus);
        assert_eq!(bleu1(&instances).unwrap(), 1.0);
        assert_eq!(rouge_l(&instances).unwrap(), 1.0);
    }
}

#[test]
fn documented_examples() {
    let one = |c: &str, r: &str| vec![EvalInstance::new("x", c, vec![r.to_string()]).unwrap()];
    assert!((bleu1(&one("a b c", "a b d")).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(bleu1(&one("A  dog", "a dog")).unwrap(), 1.0);
    assert!((bleu1(&one("a", "a b c d")).unwrap() - (-3.0f64).exp()).abs() < 1e-12);
    // LCS 3 of 4 against 3 of 5, beta 1.2.
    let p: f64 = 3.0 / 4.0;
    let r: f64 = 3.0 / 5.0;
    let f = (1.0 + 1.44) * p * r / (r + 1.44 * p);
    assert!((rouge_l(&one("a b c d", "a x b y c")).unwrap() - f).abs() < 1e-12);
}

proptest! {
    #[test]
    fn metric_ranges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let instances = to_instances(&random_corpus(&mut rng));
        let b = bleu1(&instances).unwrap();
        let r = rouge_l(&instances).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

#[derive(Deserialize)]
struct LabelledRow {
    context_id: String,
    candidate: String,
    references: Vec<String>,
    split: Split,
}

fn separation_fixture() -> (Vec<LabelledRow>, BagOfWordsOracle) {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/");
    let rows = std::fs::read_to_string(format!("{dir}separation.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let lm = TabularLm::load(format!("{dir}separation.lm")).unwrap();
    (rows, BagOfWordsOracle::new(lm.vocab().clone()))
}

/// Cosine of raw word counts over the fixture vocabulary, best reference.
fn oracle_tt(words: &[String], cand: &str, refs: &[String]) -> f64 {
    let counts = |s: &str| {
        let lower = s.to_lowercase();
        let toks: Vec<&str> = lower.split_whitespace().collect();
        words.iter().map(|w| toks.iter().filter(|t| *t == w).count() as f64).collect::<Vec<_>>()
    };
    refs.iter()
        .map(|r| cosine(&counts(cand), &counts(r)).unwrap_or(0.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn separation_fixture_gap() {
    let (rows, oracle) = separation_fixture();
    let words = oracle.vocab().token_strings().to_vec();
    let mean = |split: Split| {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r.split == split)
            .map(|r| oracle_tt(&words, &r.candidate, &r.references))
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let true_gap = mean(Split::NonHallucinated) - mean(Split::Hallucinated);
    assert!(true_gap >= 0.3, "fixture gap {true_gap}");

    let instances = |split: Split| -> Vec<EvalInstance> {
        rows.iter()
            .filter(|r| r.split == split)
            .map(|r| EvalInstance::new(r.context_id.clone(), &r.candidate, r.references.clone()).unwrap())
            .collect()
    };
    let report = split_report(
        &instances(Split::Hallucinated),
        &instances(Split::NonHallucinated),
        Some(&oracle),
        ClapTtOptions::default(),
    )
    .unwrap();
    let gap = report.deltas["clapscore_tt"];
    assert!((gap - true_gap).abs() < 1e-12, "{gap} vs {true_gap}");
    assert!(gap > 0.2);
    // Clean paraphrases also overlap more on the n-gram metrics.
    assert!(report.deltas["bleu1"] > 0.0 && report.deltas["rouge_l"] > 0.0);
}

#[test]
fn clapscore_tt_aggregation_and_missing_embeddings() {
    let store = FileEmbeddingStore::parse_str(
        "dim 2\ntext 1 0 | horse trots\ntext 0 1 | someone taps\ntext 1 1 | horse taps\n",
    )
    .unwrap();
    let inst = EvalInstance::new("c", "Horse trots", vec!["someone taps".into(), "horse taps".into()]).unwrap();
    let max = clapscore_tt_metric(&store, std::slice::from_ref(&inst), ClapTtOptions::default()).unwrap();
    assert!((max.corpus - 0.5f64.sqrt()).abs() < 1e-12);
    let opts = ClapTtOptions {
        aggregate: RefAggregate::Mean,
        skip_missing: false,
    };
    let mean = clapscore_tt_metric(&store, std::slice::from_ref(&inst), opts).unwrap();
    assert!((mean.corpus - 0.5f64.sqrt() / 2.0).abs() < 1e-12);

    let unknown = EvalInstance::new("d", "a bell", vec!["horse trots".into()]).unwrap();
    let both = [inst.clone(), unknown];
    assert!(matches!(
        clapscore_tt_metric(&store, &both, ClapTtOptions::default()),
        Err(faithdec::Error::MissingEmbedding { .. })
    ));
    let skip = ClapTtOptions {
        aggregate: RefAggregate::Max,
        skip_missing: true,
    };
    let partial = clapscore_tt_metric(&store, &both, skip).unwrap();
    assert_eq!(partial.per_instance[1], None);
    assert_eq!(partial.excluded.len(), 1);
    assert!((partial.corpus - 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn report_without_provider_has_no_clap_column() {
    let inst = vec![EvalInstance::new("c", "a b", vec!["a b".into()]).unwrap()];
    let report = compute_report(&inst, None, Split::None, ClapTtOptions::default()).unwrap();
    assert_eq!(report.corpus.keys().collect::<Vec<_>>(), ["bleu1", "rouge_l"]);
    assert!(report.to_table().contains("bleu1"));
}
