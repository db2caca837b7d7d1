use proptest::prelude::*;
use pyramid_core::model::{
    load_pyramid, read_manifest, save_pyramid, DataProperty, ObjectProperty, Value, ValueKind,
};
use pyramid_core::{
    Error, ErrorClass, KgTriplet, KnowledgePyramid, OntologyInstance, OntologySchema, TextChunk,
    Vector, VectorIndex,
};

fn schema() -> OntologySchema {
    OntologySchema {
        namespace: "http://example.org/uni#".into(),
        classes: vec!["Staff".into(), "Department".into()],
        object_properties: vec![ObjectProperty {
            name: "works_in".into(),
            domain: "Staff".into(),
            range: "Department".into(),
        }],
        data_properties: vec![DataProperty {
            name: "age".into(),
            domain: "Staff".into(),
            kind: ValueKind::Number,
        }],
    }
}

fn chunk(n: usize) -> TextChunk {
    TextChunk {
        id: format!("doc#{n}"),
        doc_id: "doc".into(),
        seq: n as u64,
        text: format!("chunk number {n}"),
    }
}

fn small() -> KnowledgePyramid {
    let mut p = KnowledgePyramid::new(schema());
    p.chunks = (0..3).map(chunk).collect();
    p.insert_triplet(KgTriplet::new("Alice", "works in", "CS", "doc#0")).unwrap();
    p.insert_triplet(KgTriplet::new("Bob", "works in", "Math", "doc#1")).unwrap();
    p.insert_instance(OntologyInstance {
        subject_id: "Alice".into(),
        subject_class: "Staff".into(),
        property: "works_in".into(),
        value: Value::entity("CS"),
        source_chunk: "doc#0".into(),
    })
    .unwrap();
    p
}

#[test]
fn empty_pyramid_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = KnowledgePyramid::new(schema());
    save_pyramid(&p, dir.path()).unwrap();
    assert_eq!(load_pyramid(dir.path()).unwrap(), p);
}

#[test]
fn manifest_counts_layers() {
    let dir = tempfile::tempdir().unwrap();
    let p = small();
    let manifest = save_pyramid(&p, dir.path()).unwrap();
    let c = &manifest.counts;
    assert_eq!((c.chunks, c.triplets, c.instances), (3, 2, 1));
    assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
    assert_eq!(load_pyramid(dir.path()).unwrap(), p);
}

#[test]
fn flipped_byte_in_kg_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    save_pyramid(&small(), dir.path()).unwrap();
    let path = dir.path().join("kg.jsonl");
    let mut bytes = std::fs::read(&path).unwrap();
    let i = bytes.iter().position(|&b| b == b'A').unwrap();
    bytes[i] = b'B';
    std::fs::write(&path, bytes).unwrap();
    match load_pyramid(dir.path()) {
        Err(e @ Error::Integrity { .. }) => {
            assert_eq!(e.class(), ErrorClass::Integrity);
            assert!(e.to_string().contains("kg"), "{e}");
        }
        other => panic!("expected integrity error, got {other:?}"),
    }
}

#[test]
fn missing_layer_file_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    save_pyramid(&small(), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("instances.jsonl")).unwrap();
    let err = load_pyramid(dir.path()).unwrap_err();
    assert!(err.to_string().contains("instances"), "{err}");
}

#[test]
fn inserts_reject_schema_violations() {
    let mut p = small();
    let bad = [
        OntologyInstance {
            subject_id: "Alice".into(),
            subject_class: "Staff".into(),
            property: "graduated_from".into(),
            value: Value::entity("MIT"),
            source_chunk: "doc#0".into(),
        },
        OntologyInstance {
            subject_id: "Alice".into(),
            subject_class: "Staff".into(),
            property: "age".into(),
            value: Value::literal(ValueKind::Number, "forty"),
            source_chunk: "doc#0".into(),
        },
        OntologyInstance {
            subject_id: "Alice".into(),
            subject_class: "Staff".into(),
            property: "age".into(),
            value: Value::literal(ValueKind::Number, "40"),
            source_chunk: "doc#9".into(),
        },
    ];
    for inst in bad {
        assert!(p.insert_instance(inst).is_err());
    }
    assert_eq!(p.instances.len(), 1);
    assert!(p.insert_triplet(KgTriplet::new("Smith, John", "works in", "CS", "doc#0")).is_err());
    assert!(p.insert_triplet(KgTriplet::new("Alice", "", "CS", "doc#0")).is_err());
    // an identical triplet is not an error, just not added
    assert!(!p.insert_triplet(KgTriplet::new("Alice", "works in", "CS", "doc#2")).unwrap());
    assert_eq!(p.kg.len(), 2);
}

#[test]
fn referenced_chunks_cannot_be_removed() {
    let mut p = small();
    assert!(p.remove_chunk("doc#0").is_err());
    assert!(p.remove_chunk("doc#1").is_err());
    assert_eq!(p.remove_chunk("doc#2").unwrap().id, "doc#2");
    assert!(p.remove_chunk("doc#2").is_err());
    p.check_invariants().unwrap();
}

fn arb_pyramid() -> impl Strategy<Value = KnowledgePyramid> {
    let names = prop::sample::select(vec!["Alice", "Bob", "Chen", "Dana", "Émile"]);
    let relations = prop::sample::select(vec!["works in", "teaches", "is with", "leads"]);
    (
        1usize..6,
        prop::collection::vec((names.clone(), relations, names.clone(), 0usize..6), 0..8),
        prop::collection::vec((names, prop::bool::ANY, -1e6f64..1e6, 0usize..6), 0..6),
        prop::collection::vec(-1.0f64..1.0, 4),
    )
        .prop_map(|(n_chunks, triplets, facts, base)| {
            let mut p = KnowledgePyramid::new(schema());
            p.chunks = (0..n_chunks).map(chunk).collect();
            p.build_meta.embedding_dim = 4;
            p.build_meta.chat_provider = "scripted".into();
            p.indexes.kg = VectorIndex::new(4);
            p.indexes.chunks = VectorIndex::new(4);
            for (h, r, t, c) in triplets {
                let t = KgTriplet::new(h, r, t, chunk(c % n_chunks).id);
                let v: Vec<f64> = base.iter().map(|x| x + t.id.len() as f64 * 0.1).collect();
                let id = t.id.clone();
                if p.insert_triplet(t).unwrap() {
                    p.indexes.kg.insert(id, Vector::new(v).unwrap()).unwrap();
                }
            }
            for (subject, entity, number, c) in facts {
                let (property, value) = if entity {
                    ("works_in", Value::entity("CS"))
                } else {
                    ("age", Value::literal(ValueKind::Number, number.to_string()))
                };
                p.insert_instance(OntologyInstance {
                    subject_id: subject.into(),
                    subject_class: "Staff".into(),
                    property: property.into(),
                    value,
                    source_chunk: chunk(c % n_chunks).id,
                })
                .unwrap();
            }
            for (i, c) in p.chunks.iter().enumerate() {
                let v: Vec<f64> = base.iter().map(|x| x * (i as f64 + 1.0) + 1e-3).collect();
                p.indexes.chunks.insert(c.id.clone(), Vector::new(v).unwrap()).unwrap();
            }
            p
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_identity(p in arb_pyramid()) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_pyramid(&p, dir.path()).unwrap();
        prop_assert_eq!(manifest.counts.triplets, p.kg.len());
        let loaded = load_pyramid(dir.path()).unwrap();
        prop_assert_eq!(&loaded, &p);
        // saving the loaded copy writes the same bytes
        let again = tempfile::tempdir().unwrap();
        save_pyramid(&loaded, again.path()).unwrap();
        for (_, file) in pyramid_core::model::LAYER_FILES {
            prop_assert_eq!(
                std::fs::read(dir.path().join(file)).unwrap(),
                std::fs::read(again.path().join(file)).unwrap()
            );
        }
    }
}
