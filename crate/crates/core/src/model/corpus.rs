use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::TextChunk;
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    #[serde(default)]
    id: Option<String>,
    doc_id: String,
    seq: u64,
    text: String,
}

/// Reads a JSON-lines corpus file, one chunk per line.
///
/// Records without an `id` get `{doc_id}#{seq}`. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TextChunk>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), &path.display().to_string())
}

pub fn parse_corpus(reader: impl BufRead, name: &str) -> Result<Vec<TextChunk>> {
    let mut chunks = Vec::new();
    let mut ids = HashSet::new();
    let mut positions = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            file: name.to_string(),
            line: line_no,
            message,
        };
        let record: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| err(format!("malformed record: {e}")))?;
        if record.text.trim().is_empty() {
            return Err(err("text is empty".into()));
        }
        if record.doc_id.trim().is_empty() {
            return Err(err("doc_id is empty".into()));
        }
        let id = record
            .id
            .unwrap_or_else(|| format!("{}#{}", record.doc_id, record.seq));
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        if !positions.insert((record.doc_id.clone(), record.seq)) {
            return Err(err(format!(
                "duplicate position ({}, {})",
                record.doc_id, record.seq
            )));
        }
        chunks.push(TextChunk {
            id,
            doc_id: record.doc_id,
            seq: record.seq,
            text: record.text,
        });
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<TextChunk>> {
        parse_corpus(text.as_bytes(), "corpus.jsonl")
    }

    #[test]
    fn ids_preserved_and_assigned() {
        let chunks = parse(concat!(
            r#"{"id":"a","doc_id":"d","seq":0,"text":"one"}"#,
            "\n",
            r#"{"doc_id":"d","seq":1,"text":"two"}"#,
            "\n"
        ))
        .unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].id, "a");
        assert_eq!(chunks[1].id, "d#1");
    }

    #[test]
    fn whitespace_text_names_line() {
        let err = parse(concat!(
            r#"{"doc_id":"d","seq":0,"text":"ok"}"#,
            "\n",
            r#"{"doc_id":"d","seq":1,"text":"   "}"#
        ))
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_duplicate() {
        assert!(matches!(parse("{not json"), Err(Error::Parse { line: 1, .. })));
        let dup = concat!(
            r#"{"id":"x","doc_id":"d","seq":0,"text":"a"}"#,
            "\n",
            r#"{"id":"x","doc_id":"d","seq":1,"text":"b"}"#
        );
        assert!(matches!(parse(dup), Err(Error::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn empty_file_is_empty_set() {
        assert!(parse("").unwrap().is_empty());
    }
}
