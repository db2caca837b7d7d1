mod common;

use common::{rule, scripted, text_chunk};
use pyramid_core::construction::{
    complete_relations, disambiguate, extract_entities, extract_instances, extract_kg, paraphrase,
    BuildReport,
};
use pyramid_core::llm::ScriptRule;
use pyramid_core::model::{validate_instance, ObjectProperty, Value};
use pyramid_core::OntologySchema;

fn schema() -> OntologySchema {
    OntologySchema {
        namespace: "http://example.org/uni#".into(),
        classes: vec!["Staff".into(), "University".into()],
        object_properties: vec![ObjectProperty {
            name: "graduated_from".into(),
            domain: "Staff".into(),
            range: "University".into(),
        }],
        data_properties: vec![],
    }
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn triple(h: &str, r: &str, t: &str) -> (String, String, String) {
    (h.into(), r.into(), t.into())
}

#[test]
fn no_chunks_no_instances() {
    let (backend, gw) = scripted(vec![]);
    let mut report = BuildReport::default();
    let out = extract_instances(&schema(), &[], &gw, "academic", 1, &mut report).unwrap();
    assert!(out.is_empty());
    assert_eq!(backend.calls(), 0);
}

#[test]
fn schema_without_pairs_is_an_error() {
    let (_, gw) = scripted(vec![]);
    let empty = OntologySchema {
        namespace: "x".into(),
        classes: vec!["Staff".into()],
        ..Default::default()
    };
    let chunks = [text_chunk("d#0", "Alice studied at MIT.")];
    assert!(extract_instances(&empty, &chunks, &gw, "academic", 1, &mut BuildReport::default()).is_err());
}

#[test]
fn one_line_one_instance() {
    let (_, gw) = scripted(vec![rule("f_ins", "", "Alice | graduated_from | MIT")]);
    let chunks = [text_chunk("d#0", "Alice studied at MIT.")];
    let mut report = BuildReport::default();
    let out = extract_instances(&schema(), &chunks, &gw, "academic", 1, &mut report).unwrap();
    assert_eq!(out.len(), 1);
    let i = &out[0];
    assert_eq!((i.subject_id.as_str(), i.property.as_str()), ("Alice", "graduated_from"));
    assert_eq!(i.value, Value::entity("MIT"));
    assert_eq!(i.source_chunk, "d#0");
    validate_instance(&schema(), i).unwrap();
}

#[test]
fn repeated_fact_keeps_first_provenance() {
    let (_, gw) = scripted(vec![
        rule("f_ins", "earlier", "Alice | graduated_from | MIT"),
        rule("f_ins", "later", "Alice | graduated_from | MIT\nBob | graduated_from | ETH, Zurich"),
    ]);
    let chunks = [
        text_chunk("d#0", "Alice, earlier, studied at MIT."),
        text_chunk("d#1", "Alice and Bob graduated later."),
    ];
    for in_flight in [1, 4] {
        let mut report = BuildReport::default();
        let out = extract_instances(&schema(), &chunks, &gw, "academic", in_flight, &mut report).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].source_chunk, "d#0");
        assert_eq!(out[1].value.raw, "ETH, Zurich");
        assert_eq!(report.instances_duplicate, 1);
    }
}

#[test]
fn failing_chunk_is_skipped_not_fatal() {
    let fail = ScriptRule {
        error: Some("protocol".into()),
        response: None,
        ..rule("f_ins", "broken", "")
    };
    let (_, gw) = scripted(vec![fail, rule("f_ins", "", "Alice | graduated_from | MIT")]);
    let chunks = [text_chunk("d#0", "a broken chunk"), text_chunk("d#1", "Alice studied at MIT.")];
    let mut report = BuildReport::default();
    let out = extract_instances(&schema(), &chunks, &gw, "academic", 1, &mut report).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].chunk, "d#0");
}

#[test]
fn paraphrase_lines() {
    let chunk = text_chunk("d#0", "text");
    let (_, gw) = scripted(vec![rule("f_par", "", "A works in B.\nC leads D.\nE teaches F.")]);
    assert_eq!(paraphrase(&chunk, &gw).unwrap().len(), 3);
    let (_, gw) = scripted(vec![rule("f_par", "", "\nA works in B.\n\n  \nC leads D.\n")]);
    assert_eq!(paraphrase(&chunk, &gw).unwrap(), owned(&["A works in B.", "C leads D."]));
    let (_, gw) = scripted(vec![rule("f_par", "", "")]);
    assert!(paraphrase(&chunk, &gw).unwrap().is_empty());
}

#[test]
fn empty_paraphrase_flags_low_yield() {
    let (_, gw) = scripted(vec![rule("f_par", "", "")]);
    let mut report = BuildReport::default();
    let kg = extract_kg(&[text_chunk("d#0", "nothing here")], &gw, 1, &mut report);
    assert!(kg.is_empty());
    assert_eq!(report.low_yield_chunks, owned(&["d#0"]));
}

#[test]
fn entities_are_unique_and_comma_free() {
    let claims = owned(&["Alice works in CS"]);
    let (_, gw) = scripted(vec![rule("f_ent", "", "Alice\nCS")]);
    assert_eq!(extract_entities(&claims, &gw).unwrap().entities, owned(&["Alice", "CS"]));
    let (_, gw) = scripted(vec![rule("f_ent", "", "Alice\nalice\nAlice\nCS")]);
    assert_eq!(extract_entities(&claims, &gw).unwrap().entities, owned(&["Alice", "CS"]));
    let (_, gw) = scripted(vec![rule("f_ent", "", "Smith, John\nCS")]);
    let list = extract_entities(&claims, &gw).unwrap();
    assert_eq!(list.entities, owned(&["CS"]));
    assert_eq!(list.rejected, owned(&["Smith, John"]));
}

#[test]
fn relations_flag_off_list_entities() {
    let claims = owned(&["Alice works in CS"]);
    let entities = owned(&["Alice", "CS"]);
    let (_, gw) = scripted(vec![rule("f_rel", "", "Alice, works in, CS")]);
    let parse = complete_relations(&claims, &entities, &gw).unwrap();
    assert_eq!(parse.triplets, vec![triple("Alice", "works in", "CS")]);
    assert!(parse.off_list.is_empty());

    let (_, gw) = scripted(vec![rule("f_rel", "", "Alice, works in, CS\nAlice, lives in, Boston")]);
    let parse = complete_relations(&claims, &entities, &gw).unwrap();
    assert_eq!(parse.triplets.len(), 2);
    assert_eq!(parse.off_list, vec![1]);

    let (backend, gw) = scripted(vec![]);
    let parse = complete_relations(&[], &entities, &gw).unwrap();
    assert!(parse.triplets.is_empty());
    assert_eq!(backend.calls(), 0);
}

#[test]
fn disambiguation_examples() {
    let entities = owned(&["A", "Z"]);
    let input = vec![triple("A", "works in", "Z"), triple("A", "is with", "Z")];
    let (_, gw) = scripted(vec![rule("f_dis", "is with", "A, works in, Z")]);
    let out = disambiguate(&input, &entities, &gw).unwrap();
    assert_eq!(out.triplets, vec![triple("A", "works in", "Z")]);
    assert!(!out.skipped);

    // exact repeats go before the backend sees them
    let repeated = ScriptRule {
        regex: Some("(?s)A, works in, Z.*A, works in, Z".into()),
        error: Some("protocol".into()),
        response: None,
        ..rule("f_dis", "", "")
    };
    let (_, gw) = scripted(vec![repeated, rule("f_dis", "", "A, works in, Z")]);
    let dup = vec![triple("A", "works in", "Z"), triple("A", "works in", "Z")];
    let out = disambiguate(&dup, &entities, &gw).unwrap();
    assert_eq!(out.triplets, vec![triple("A", "works in", "Z")]);

    let (backend, gw) = scripted(vec![]);
    assert!(disambiguate(&[], &entities, &gw).unwrap().triplets.is_empty());
    assert_eq!(backend.calls(), 0);

    // unusable output keeps the originals
    let (_, gw) = scripted(vec![rule("f_dis", "", "I cannot help with that.")]);
    let out = disambiguate(&input, &entities, &gw).unwrap();
    assert!(out.skipped);
    assert_eq!(out.triplets, input);
}

#[test]
fn cascade_dedups_across_chunks() {
    let (_, gw) = scripted(vec![
        rule("f_par", "", "Alice works in CS."),
        rule("f_ent", "", "Alice\nCS"),
        rule("f_rel", "", "Alice, works in, CS"),
        rule("f_dis", "", "Alice, works in, CS"),
    ]);
    let chunks = [text_chunk("d#0", "one"), text_chunk("d#1", "two")];
    let mut report = BuildReport::default();
    let kg = extract_kg(&chunks, &gw, 2, &mut report);
    assert_eq!(kg.len(), 1);
    assert_eq!(kg[0].source_chunk, "d#0");
    assert_eq!(report.triplets_cross_chunk_duplicates, 1);

    let mut report = BuildReport::default();
    assert!(extract_kg(&[], &gw, 1, &mut report).is_empty());
}
