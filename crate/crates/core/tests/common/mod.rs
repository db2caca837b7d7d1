#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pyramid_core::eval::load_dataset;
use pyramid_core::interaction::{CompletionReport, CondensationReport};
use pyramid_core::llm::{LlmGateway, ScriptRule, ScriptedBackend, TemplateSet};
use pyramid_core::construction::BuildReport;
use pyramid_core::model::{load_corpus, load_schema};
use pyramid_core::{
    BuildOptions, EvalReport, KnowledgePyramid, OntologySchema, Pipeline, PipelineConfig, QaItem,
    TextChunk,
};
use serde::Serialize;

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

pub fn golden_dir() -> PathBuf {
    toy_dir().join("golden")
}

pub fn toy_config() -> PipelineConfig {
    PipelineConfig::load(toy_dir().join("config.toml")).expect("toy config loads")
}

pub fn toy_pipeline() -> Pipeline {
    Pipeline::from_config(toy_config()).expect("toy pipeline")
}

pub fn toy_inputs() -> (Vec<TextChunk>, OntologySchema) {
    let dir = toy_dir();
    (
        load_corpus(dir.join("corpus.jsonl")).unwrap(),
        load_schema(dir.join("schema.json")).unwrap(),
    )
}

pub fn toy_items() -> Vec<QaItem> {
    load_dataset(toy_dir().join("qa.jsonl")).unwrap()
}

pub struct ToyRun {
    pub built: KnowledgePyramid,
    pub build: BuildReport,
    pub completion: CompletionReport,
    pub completed: KnowledgePyramid,
    pub condensation: CondensationReport,
    pub pyramid: KnowledgePyramid,
    pub eval: EvalReport,
}

/// build, complete, condense, then evaluate the toy QA set.
pub fn full_run(p: &Pipeline) -> ToyRun {
    let (chunks, schema) = toy_inputs();
    let (built, build) = p.build(chunks, schema, BuildOptions::default()).unwrap();
    let mut pyramid = built.clone();
    let completion = p.complete(&mut pyramid).unwrap();
    let completed = pyramid.clone();
    let condensation = p.condense(&mut pyramid).unwrap();
    let eval = p.evaluate(&pyramid, &toy_items());
    ToyRun {
        built,
        build,
        completion,
        completed,
        condensation,
        pyramid,
        eval,
    }
}

pub fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).unwrap();
    out.push(b'\n');
    out
}

pub fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).unwrap();
        out.push(b'\n');
    }
    out
}

/// Compares `actual` against `fixtures/toy/golden/<name>`.
/// `UPDATE_GOLDEN=1` rewrites the file instead.
pub fn check_golden(name: &str, actual: &[u8]) {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDEN=1)", path.display()));
    if expected != actual {
        let a = String::from_utf8_lossy(actual);
        let e = String::from_utf8_lossy(&expected);
        let line = a
            .lines()
            .zip(e.lines())
            .position(|(x, y)| x != y)
            .unwrap_or(a.lines().count().min(e.lines().count()));
        panic!(
            "{name} differs from golden at line {}:\n  actual:   {}\n  expected: {}",
            line + 1,
            a.lines().nth(line).unwrap_or("<eof>"),
            e.lines().nth(line).unwrap_or("<eof>")
        );
    }
}

/// Every file of a saved pyramid, by name.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Script rule for `template` whose prompt contains `needle`.
pub fn rule(template: &str, needle: &str, response: &str) -> ScriptRule {
    ScriptRule {
        template: Some(template.into()),
        contains: (!needle.is_empty()).then(|| needle.into()),
        regex: None,
        response: Some(response.into()),
        echo: false,
        error: None,
    }
}

pub fn echo(template: &str) -> ScriptRule {
    ScriptRule {
        template: Some(template.into()),
        contains: None,
        regex: None,
        response: None,
        echo: true,
        error: None,
    }
}

/// Gateway over a scripted backend; the backend is returned to count calls.
pub fn scripted(rules: Vec<ScriptRule>) -> (Arc<ScriptedBackend>, LlmGateway) {
    let backend = Arc::new(ScriptedBackend::new(rules, None).unwrap());
    let gateway = LlmGateway::new(backend.clone(), TemplateSet::builtin());
    (backend, gateway)
}

pub fn text_chunk(id: &str, text: &str) -> TextChunk {
    let (doc, seq) = id.split_once('#').unwrap_or((id, "0"));
    TextChunk {
        id: id.into(),
        doc_id: doc.into(),
        seq: seq.parse().unwrap_or(0),
        text: text.into(),
    }
}
