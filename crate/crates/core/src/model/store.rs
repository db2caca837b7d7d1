//! On-disk layout: one JSON document per schema/metadata, JSON lines per layer,
//! and a manifest carrying per-file SHA-256 digests and layer counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BuildMeta, KgTriplet, KnowledgePyramid, OntologyInstance, OntologySchema, TextChunk};
use crate::embedding::{Vector, VectorIndex};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `(layer name, file name)` for every digested file.
pub const LAYER_FILES: [(&str, &str); 6] = [
    ("schema", "schema.json"),
    ("instances", "instances.jsonl"),
    ("kg", "kg.jsonl"),
    ("chunks", "chunks.jsonl"),
    ("vectors", "vectors.jsonl"),
    ("build_meta", "build_meta.json"),
];

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub chunks: usize,
    pub triplets: usize,
    pub instances: usize,
    pub vectors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub counts: LayerCounts,
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    layer: String,
    id: String,
    vector: Vector,
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn from_jsonl<T: DeserializeOwned>(bytes: &[u8], file: &str) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        file: file.to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                file: file.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes every layer into `dir` (created if needed) and returns the manifest.
pub fn save_pyramid(pyramid: &KnowledgePyramid, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let vectors = pyramid
        .indexes
        .kg
        .iter()
        .map(|(id, v)| ("kg", id, v))
        .chain(pyramid.indexes.chunks.iter().map(|(id, v)| ("chunks", id, v)))
        .map(|(layer, id, v)| VectorRecord {
            layer: layer.to_string(),
            id: id.to_string(),
            vector: v.clone(),
        });
    let vector_count = pyramid.indexes.kg.len() + pyramid.indexes.chunks.len();

    let payloads: [Vec<u8>; 6] = [
        pretty(&pyramid.schema)?,
        to_jsonl(&pyramid.instances)?,
        to_jsonl(&pyramid.kg)?,
        to_jsonl(&pyramid.chunks)?,
        to_jsonl(vectors)?,
        pretty(&pyramid.build_meta)?,
    ];

    let mut files = BTreeMap::new();
    for ((layer, file), bytes) in LAYER_FILES.iter().zip(payloads.iter()) {
        let path = dir.join(file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        files.insert(
            layer.to_string(),
            FileEntry {
                file: file.to_string(),
                sha256: digest(bytes),
            },
        );
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        counts: LayerCounts {
            chunks: pyramid.chunks.len(),
            triplets: pyramid.kg.len(),
            instances: pyramid.instances.len(),
            vectors: vector_count,
        },
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_layer(dir: &Path, manifest: &Manifest, layer: &str) -> Result<Vec<u8>> {
    let entry = manifest
        .files
        .get(layer)
        .ok_or_else(|| Error::MissingLayer(layer.to_string()))?;
    let path = dir.join(&entry.file);
    let bytes = match fs::read(&path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingLayer(layer.to_string()))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let actual = digest(&bytes);
    if actual != entry.sha256 {
        return Err(Error::Integrity {
            layer: layer.to_string(),
            message: format!("digest {actual} does not match manifest {}", entry.sha256),
        });
    }
    Ok(bytes)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingLayer("manifest".into()))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Integrity {
            layer: "manifest".into(),
            message: format!("unsupported format version {}", manifest.format_version),
        });
    }
    Ok(manifest)
}

/// Loads a pyramid written by [`save_pyramid`], verifying digests, counts and invariants.
pub fn load_pyramid(dir: impl AsRef<Path>) -> Result<KnowledgePyramid> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;

    let schema: OntologySchema = serde_json::from_slice(&read_layer(dir, &manifest, "schema")?)?;
    let instances: Vec<OntologyInstance> =
        from_jsonl(&read_layer(dir, &manifest, "instances")?, "instances.jsonl")?;
    let kg: Vec<KgTriplet> = from_jsonl(&read_layer(dir, &manifest, "kg")?, "kg.jsonl")?;
    let chunks: Vec<TextChunk> =
        from_jsonl(&read_layer(dir, &manifest, "chunks")?, "chunks.jsonl")?;
    let vectors: Vec<VectorRecord> =
        from_jsonl(&read_layer(dir, &manifest, "vectors")?, "vectors.jsonl")?;
    let build_meta: BuildMeta =
        serde_json::from_slice(&read_layer(dir, &manifest, "build_meta")?)?;

    let counts = LayerCounts {
        chunks: chunks.len(),
        triplets: kg.len(),
        instances: instances.len(),
        vectors: vectors.len(),
    };
    if counts != manifest.counts {
        return Err(Error::Integrity {
            layer: "manifest".into(),
            message: format!("layer counts {counts:?} differ from {:?}", manifest.counts),
        });
    }

    let mut pyramid = KnowledgePyramid {
        schema,
        instances,
        kg,
        chunks,
        build_meta,
        ..KnowledgePyramid::default()
    };
    let dim = pyramid.build_meta.embedding_dim;
    pyramid.indexes.kg = VectorIndex::new(dim);
    pyramid.indexes.chunks = VectorIndex::new(dim);
    for record in vectors {
        let index = match record.layer.as_str() {
            "kg" => &mut pyramid.indexes.kg,
            "chunks" => &mut pyramid.indexes.chunks,
            other => {
                return Err(Error::Integrity {
                    layer: "vectors".into(),
                    message: format!("unknown layer tag `{other}`"),
                })
            }
        };
        index.insert(record.id, record.vector).map_err(|e| Error::Integrity {
            layer: "vectors".into(),
            message: e.to_string(),
        })?;
    }
    pyramid.check_invariants()?;
    Ok(pyramid)
}
