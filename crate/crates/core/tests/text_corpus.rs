use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use connective_core::corpus::{
    build_splits, class_histogram, extract_pairs, read_dataset, read_jsonl_articles, write_dataset, write_examples,
    SplitSpec,
};
use connective_core::text::{find_connective, match_connective, strip_and_recase, tokenize, ConnectiveLexicon};
use proptest::prelude::*;
use regex::Regex;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Independent regex formulation of the tokenizer rules.
fn oracle_tokens(text: &str) -> Vec<String> {
    let re = Regex::new(r"[0-9]+(?:[.,][0-9]+)+|\w+(?:[-'\x{2019}]\w+)*|[^\w\s]").unwrap();
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

fn fixture_sentences() -> Vec<String> {
    let text = std::fs::read_to_string(fixture("corpus.jsonl")).unwrap();
    text.lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .flat_map(|v| {
            v["paragraphs"]
                .as_array()
                .unwrap()
                .iter()
                .flat_map(|p| p.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()))
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.trim().is_empty())
        .collect()
}

#[test]
fn tokenizer_agrees_with_regex_oracle_on_fixture() {
    let sentences = fixture_sentences();
    assert!(sentences.len() > 500);
    for s in sentences {
        assert_eq!(tokenize(&s).unwrap().tokens, oracle_tokens(&s), "{s:?}");
    }
}

proptest! {
    #[test]
    fn tokenizer_agrees_with_regex_oracle(s in "[a-zA-Z0-9 ,.'\\-!?;:()\"]{1,40}") {
        prop_assume!(!s.trim().is_empty());
        prop_assert_eq!(tokenize(&s).unwrap().tokens, oracle_tokens(&s));
    }

    #[test]
    fn tokens_are_an_in_order_subsequence_of_raw(s in "[a-zA-Zé0-9 ,.'\\-]{1,40}") {
        prop_assume!(!s.trim().is_empty());
        let sent = tokenize(&s).unwrap();
        prop_assert!(!sent.tokens.is_empty());
        let mut cursor = 0;
        for t in &sent.tokens {
            let pos = sent.raw[cursor..].find(t.as_str());
            prop_assert!(pos.is_some());
            cursor += pos.unwrap() + t.len();
        }
    }

    #[test]
    fn prepend_match_strip_round_trip(
        entry in 0usize..19,
        body in "[a-z]{2,8}( [a-z]{1,8}){0,5}",
        comma in any::<bool>(),
        shout in any::<bool>(),
    ) {
        let lex = ConnectiveLexicon::default();
        let base = tokenize(&format!("{body}.")).unwrap();
        prop_assume!(find_connective(&base, &lex).is_none());

        let e = &lex.entries()[entry];
        let mut surface = e.name();
        surface = if shout { surface.to_uppercase() } else {
            let mut c = surface.chars();
            c.next().unwrap().to_uppercase().chain(c).collect()
        };
        let sep = if e.comma_required || comma { ", " } else { " " };
        let text = format!("{surface}{sep}{body}.");
        let m = match_connective(&tokenize(&text).unwrap(), &lex).unwrap();
        prop_assert_eq!(m.label, e.label);
        prop_assert!(find_connective(&m.stripped, &lex).is_none());
        let lower = |v: &[String]| v.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>();
        prop_assert_eq!(lower(&m.stripped.tokens), lower(&base.tokens));
        prop_assert_eq!(&m.stripped.tokens[1..], &base.tokens[1..]);
        let again = strip_and_recase(&tokenize(&text).unwrap(), m.span).unwrap();
        prop_assert_eq!(again, m.stripped);
    }

    #[test]
    fn never_matches_mid_sentence(entry in 0usize..19, lead in "[A-Z][a-z]{3,7}") {
        let lex = ConnectiveLexicon::default();
        prop_assume!(lex.label_of(&lead).is_none() && lead.to_lowercase() != "on" && lead.to_lowercase() != "in" && lead.to_lowercase() != "by" && lead.to_lowercase() != "for");
        let text = format!("{lead} {}, it rained.", lex.entries()[entry].name());
        prop_assert!(find_connective(&tokenize(&text).unwrap(), &lex).is_none());
    }
}

fn extract_fixture() -> connective_core::corpus::Extraction {
    let lex = ConnectiveLexicon::default();
    let records = read_jsonl_articles(BufReader::new(File::open(fixture("corpus.jsonl")).unwrap()));
    extract_pairs(records, &lex)
}

#[test]
fn extraction_matches_frozen_reference_tsv() {
    let lex = ConnectiveLexicon::default();
    let out = extract_fixture();
    let mut buf = Vec::new();
    write_examples(&mut buf, &out.examples, &lex).unwrap();
    let golden = std::fs::read(fixture("extract_golden.tsv")).unwrap();
    assert!(buf == golden, "extraction differs from the frozen reference output");
    assert_eq!(out.stats.skipped_records, 2);
    assert_eq!(out.stats.degenerate_pairs, 1);
    assert_eq!(out.stats.examples, 374);
}

#[test]
fn histogram_matches_reference_counts() {
    let lex = ConnectiveLexicon::default();
    let out = extract_fixture();
    let golden = std::fs::read_to_string(fixture("histogram_golden.tsv")).unwrap();
    let expected: Vec<usize> = golden
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(class_histogram(&out.examples, lex.num_labels()), expected);
}

#[test]
fn comma_required_rejections_in_fixture() {
    let out = extract_fixture();
    let lex = ConnectiveLexicon::default();
    let rejected: Vec<_> = out
        .examples
        .iter()
        .filter(|e| e.arg2[0] == "Instead" && e.arg2[1] != ",")
        .collect();
    assert!(!rejected.is_empty());
    assert!(rejected.iter().all(|e| e.label == lex.no_connective()));
}

#[test]
fn extraction_emits_one_example_per_adjacent_pair() {
    let lex = ConnectiveLexicon::default();
    let records: Vec<_> = read_jsonl_articles(BufReader::new(File::open(fixture("corpus.jsonl")).unwrap()))
        .into_iter()
        .filter_map(Result::ok)
        .filter(|a| a.paragraphs.iter().flatten().all(|s| !s.trim().is_empty()))
        .collect();
    for article in records {
        let expected: usize = article.paragraphs.iter().map(|p| p.len().saturating_sub(1)).sum();
        let has_degenerate = article.paragraphs.iter().flatten().any(|s| s.trim() == "However,");
        let got = extract_pairs([Ok(article.clone())], &lex).examples.len();
        assert_eq!(got + usize::from(has_degenerate), expected, "{}", article.id);
    }
}

#[test]
fn extracted_arg2_never_starts_with_a_connective() {
    let lex = ConnectiveLexicon::default();
    for ex in extract_fixture().examples {
        assert!(ex.label < lex.num_labels());
        if ex.label != lex.no_connective() {
            let s = connective_core::Sentence::from_tokens(ex.arg2.clone());
            let e = &lex.entries()[ex.label];
            let lowered: Vec<String> = s
                .tokens
                .iter()
                .take(e.surface.len())
                .map(|t| t.to_lowercase())
                .collect();
            assert_ne!(lowered, e.surface);
        }
    }
}

fn fixture_spec(seed: u64) -> SplitSpec {
    SplitSpec {
        dev_per_class: 1,
        test_per_class: 1,
        train_per_class: 6,
        seed,
        ..SplitSpec::default()
    }
}

#[test]
fn fixture_splits_are_balanced_disjoint_and_reproducible() {
    let lex = ConnectiveLexicon::default();
    let examples = extract_fixture().examples;
    for seed in [0, 1, 7] {
        let spec = fixture_spec(seed);
        let (split, _) = build_splits(&examples, &lex, &spec).unwrap();
        assert_eq!(class_histogram(&split.train, 20), vec![6; 20]);
        assert_eq!(class_histogram(&split.dev, 20), vec![1; 20]);
        assert_eq!(class_histogram(&split.test, 20), vec![1; 20]);

        let ids = |rows: &[connective_core::corpus::LabeledExample]| {
            rows.iter().map(|e| e.article_id.clone()).collect::<HashSet<_>>()
        };
        let (tr, dv, te) = (ids(&split.train), ids(&split.dev), ids(&split.test));
        assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_dataset(dir_a.path(), &split, &lex).unwrap();
        let again = build_splits(&examples, &lex, &spec).unwrap().0;
        write_dataset(dir_b.path(), &again, &lex).unwrap();
        for f in ["train.tsv", "dev.tsv", "test.tsv"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(f)).unwrap(),
                std::fs::read(dir_b.path().join(f)).unwrap()
            );
        }
        assert_eq!(read_dataset(dir_a.path(), &lex).unwrap(), split);
    }
}

#[test]
fn dev_and_test_have_no_duplicates() {
    let lex = ConnectiveLexicon::default();
    let examples = extract_fixture().examples;
    let (split, _) = build_splits(&examples, &lex, &fixture_spec(5)).unwrap();
    for rows in [&split.dev, &split.test] {
        let unique: HashSet<_> = rows.iter().collect();
        assert_eq!(unique.len(), rows.len());
    }
}

#[test]
fn infeasible_spec_names_a_short_class() {
    let lex = ConnectiveLexicon::default();
    let examples = extract_fixture().examples;
    let counts = class_histogram(&examples, lex.num_labels());
    let spec = SplitSpec {
        dev_per_class: 2,
        test_per_class: 2,
        train_per_class: 4,
        seed: 5,
        ..SplitSpec::default()
    };
    match build_splits(&examples, &lex, &spec) {
        Err(connective_core::Error::InsufficientClassData { class, .. }) => {
            let label = lex.label_of(&class).unwrap();
            assert!(counts[label] < 5, "{class} has {} examples", counts[label]);
        }
        other => panic!("expected insufficient data, got {other:?}"),
    }
}
