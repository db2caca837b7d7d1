mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::{rule, scripted, text_chunk};
use proptest::prelude::*;
use pyramid_core::embedding::HashedNgramEmbedder;
use pyramid_core::eval::{bleu_n, embedding_similarity, hit_rate, score_choices, QaItem, QaKind};
use pyramid_core::{KnowledgePyramid, OntologySchema, Pipeline, PipelineConfig};

fn set(labels: &[&str]) -> BTreeSet<String> {
    labels.iter().map(|s| s.to_string()).collect()
}

fn labels(n: u8) -> Vec<String> {
    (0..n).map(|i| ((b'A' + i) as char).to_string()).collect()
}

#[test]
fn choice_examples() {
    let four = labels(4);
    assert_eq!(score_choices(&set(&["B"]), &set(&["B"]), &four).unwrap(), (1.0, 1.0, 1.0));
    let eight = labels(8);
    let all: Vec<&str> = eight.iter().map(String::as_str).collect();
    let (p, r, f) = score_choices(&set(&all), &set(&["A", "B"]), &eight).unwrap();
    assert_eq!((p, r), (0.25, 1.0));
    assert!((f - 0.4).abs() < 1e-15);
    assert_eq!(score_choices(&set(&[]), &set(&["A"]), &four).unwrap(), (0.0, 0.0, 0.0));
    assert!(score_choices(&set(&["E"]), &set(&["A"]), &four).is_err());
}

#[test]
fn bleu_examples() {
    let s = "the quick brown fox jumps over";
    assert_eq!(bleu_n(s, s, 2), 1.0);
    assert_eq!(bleu_n(s, s, 4), 1.0);
    assert!(bleu_n("apples oranges pears", "cars trucks boats", 2) < 0.05);
    assert_eq!(bleu_n("", "the cat", 2), 0.0);
    // 3 of 3 unigrams, (2+1)/(2+1) bigrams, brevity exp(1 - 4/3)
    let want = (1.0f64 - 4.0 / 3.0).exp();
    assert_eq!(bleu_n("the cat sat", "the cat sat down", 2), want);
}

#[test]
fn embedding_similarity_examples() {
    let e = HashedNgramEmbedder::new(256, 0);
    let a = "Prof. Alan Reed works in the Z Institute.";
    let b = "Alan Reed is a member of the Z Institute.";
    assert!((embedding_similarity(a, a, &e).unwrap() - 1.0).abs() < 1e-12);
    let ab = embedding_similarity(a, b, &e).unwrap();
    assert_eq!(ab, embedding_similarity(b, a, &e).unwrap());
    let unrelated = embedding_similarity(a, "Tickets sell out by noon on Fridays.", &e).unwrap();
    assert!(ab > unrelated, "{ab} vs {unrelated}");
}

#[test]
fn hit_rate_examples() {
    let gold = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let r = "Alice, Bob and Carol work at MIT.";
    assert_eq!(hit_rate(r, &gold(&["Alice", "Bob", "Carol"])), Some(1.0));
    assert_eq!(hit_rate(r, &gold(&["Alice", "Dave", "Erin", "Frank"])), Some(0.25));
    assert_eq!(hit_rate("the   MASSACHUSETTS institute", &gold(&["Massachusetts Institute"])), Some(1.0));
    assert_eq!(hit_rate(r, &[]), None);
}

proptest! {
    #[test]
    fn bleu_is_bounded(a in "[a-z ,.]{0,40}", b in "[a-z ,.]{0,40}", n in 1usize..=4) {
        let s = bleu_n(&a, &b, n);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn bleu_of_itself_is_one(words in prop::collection::vec("[a-z]{1,6}", 4..12)) {
        let x = words.join(" ");
        prop_assert_eq!(bleu_n(&x, &x, 2), 1.0);
        prop_assert_eq!(bleu_n(&x, &x, 4), 1.0);
    }

    #[test]
    fn appending_never_lowers_hit_rate(
        response in "[A-Za-z ]{0,30}",
        suffix in "[A-Za-z ]{0,30}",
        gold in prop::collection::vec("[A-Za-z]{1,4}( [A-Za-z]{1,4})?", 1..4),
    ) {
        let before = hit_rate(&response, &gold).unwrap();
        let after = hit_rate(&format!("{response}{suffix}"), &gold).unwrap();
        prop_assert!(after >= before);
    }
}

fn open_item(id: &str, question: &str) -> QaItem {
    QaItem {
        id: id.into(),
        question: question.into(),
        kind: QaKind::Open,
        choices: vec![],
        gold: vec![],
        reference: Some("Alice works in CS.".into()),
        gold_entities: vec!["Alice".into()],
        expected_layer: None,
    }
}

fn bench_setup() -> (Pipeline, KnowledgePyramid) {
    let (_, gateway) = scripted(vec![
        rule("query_onto", "", "SELECT ?s WHERE { ?s <works_in> \"CS\" }"),
        rule("synthesize_text", "Who works in CS", "Alice works in CS."),
        rule("synthesize_text", "Where is Bob", "Bob is away."),
    ]);
    let p = Pipeline::new(PipelineConfig::default(), gateway, Arc::new(HashedNgramEmbedder::new(64, 1)));
    let schema = OntologySchema {
        namespace: "x#".into(),
        classes: vec!["Staff".into()],
        ..Default::default()
    };
    let mut py = KnowledgePyramid::new(schema);
    py.chunks = vec![text_chunk("d#0", "Alice works in CS."), text_chunk("d#1", "Bob is on leave.")];
    p.reindex(&mut py).unwrap();
    (p, py)
}

#[test]
fn open_only_dataset_has_no_choice_metrics() {
    let (p, py) = bench_setup();
    let items = [open_item("q1", "Who works in CS?"), open_item("q2", "Where is Bob?")];
    let report = p.evaluate(&py, &items);
    assert_eq!(report.failed, 0);
    assert!(report.aggregates.choice.is_none());
    assert_eq!(report.aggregates.open.as_ref().unwrap().items, 2);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["aggregates"].get("choice").is_none());
}

#[test]
fn routing_and_failures_cover_every_item() {
    let (p, py) = bench_setup();
    let items = [
        open_item("q1", "Who works in CS?"),
        open_item("q2", "Where is Bob?"),
        // no synthesis rule for this one
        open_item("q3", "What is the weather?"),
    ];
    let report = p.evaluate(&py, &items);
    assert_eq!((report.items, report.answered, report.failed), (3, 2, 1));
    let answered_share: f64 = report.routing.proportions.values().sum();
    assert!((answered_share - 1.0).abs() < 1e-12);
    let total = report.answered as f64 / report.items as f64 + report.routing.failure_fraction;
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(report.aggregates.open.as_ref().unwrap().items, 2);
    // dataset order does not matter
    let mut reversed = items.to_vec();
    reversed.reverse();
    assert_eq!(p.evaluate(&py, &reversed), report);
}
