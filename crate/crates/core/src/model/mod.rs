//! Domain types for the three pyramid layers and their invariants.
//!
//! The ontology layer is a schema plus `(subject, property, value)` facts, the
//! knowledge-graph layer is a set of `(head, relation, tail)` triplets, and the
//! raw-text layer is the chunked corpus every other layer points back into.

mod corpus;
mod schema;
mod store;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::VectorIndex;
use crate::error::{Error, Result};

pub use corpus::{load_corpus, parse_corpus};
pub use schema::{load_schema, validate_instance, validate_schema, PropertyRef};
pub use store::{load_pyramid, read_manifest, save_pyramid, Manifest, LAYER_FILES};

/// Character that separates head, relation and tail in line-oriented triplet text.
pub const FIELD_SEPARATOR: char = ',';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub id: String,
    pub doc_id: String,
    pub seq: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Number,
    Date,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::Text => "text",
            ValueKind::Number => "number",
            ValueKind::Date => "date",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectProperty {
    pub name: String,
    pub domain: String,
    pub range: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataProperty {
    pub name: String,
    pub domain: String,
    pub kind: ValueKind,
}

/// Ontology schema. Collections are kept in declaration order, which fixes the
/// order in which extraction and condensation visit `(class, property)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologySchema {
    pub namespace: String,
    pub classes: Vec<String>,
    #[serde(default)]
    pub object_properties: Vec<ObjectProperty>,
    #[serde(default)]
    pub data_properties: Vec<DataProperty>,
}

impl OntologySchema {
    /// All `(class, property)` pairs: object properties first, then data properties.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.object_properties
            .iter()
            .map(|p| (p.domain.clone(), p.name.clone()))
            .chain(
                self.data_properties
                    .iter()
                    .map(|p| (p.domain.clone(), p.name.clone())),
            )
            .collect()
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }

    pub fn property(&self, class: &str, property: &str) -> Option<PropertyRef<'_>> {
        if let Some(p) = self
            .object_properties
            .iter()
            .find(|p| p.domain == class && p.name == property)
        {
            return Some(PropertyRef::Object(p));
        }
        self.data_properties
            .iter()
            .find(|p| p.domain == class && p.name == property)
            .map(PropertyRef::Data)
    }

    pub fn pair_count(&self) -> usize {
        self.object_properties.len() + self.data_properties.len()
    }
}

/// Kind tag stored next to every instance value so filters compare like with like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    Entity,
    Text,
    Number,
    Date,
}

impl From<ValueKind> for LiteralKind {
    fn from(kind: ValueKind) -> Self {
        match kind {
            ValueKind::Text => LiteralKind::Text,
            ValueKind::Number => LiteralKind::Number,
            ValueKind::Date => LiteralKind::Date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Value {
    pub kind: LiteralKind,
    pub raw: String,
}

impl Value {
    pub fn entity(raw: impl Into<String>) -> Self {
        Self {
            kind: LiteralKind::Entity,
            raw: raw.into(),
        }
    }

    pub fn literal(kind: ValueKind, raw: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            raw: raw.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyInstance {
    pub subject_id: String,
    pub subject_class: String,
    pub property: String,
    pub value: Value,
    pub source_chunk: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgTriplet {
    pub id: String,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub source_chunk: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condensed_from: Option<Vec<String>>,
}

impl KgTriplet {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
        source_chunk: impl Into<String>,
    ) -> Self {
        let (head, relation, tail) = (head.into(), relation.into(), tail.into());
        Self {
            id: triplet_id(&head, &relation, &tail),
            head,
            relation,
            tail,
            source_chunk: source_chunk.into(),
            condensed_from: None,
        }
    }

    pub fn key(&self) -> (&str, &str, &str) {
        (&self.head, &self.relation, &self.tail)
    }

    /// `head relation tail`, the natural-language form used for retrieval.
    pub fn sentence(&self) -> String {
        format!("{} {} {}", self.head, self.relation, self.tail)
    }

    /// `head, relation, tail`, the line form prompts use.
    pub fn line(&self) -> String {
        format!("{}, {}, {}", self.head, self.relation, self.tail)
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        for (name, field) in [
            ("head", &self.head),
            ("relation", &self.relation),
            ("tail", &self.tail),
        ] {
            if field.trim().is_empty() {
                return Err(format!("triplet {}: empty {name}", self.id));
            }
            if field.contains(FIELD_SEPARATOR) || field.contains('\n') {
                return Err(format!("triplet {}: {name} contains a separator", self.id));
            }
        }
        Ok(())
    }
}

/// Content-derived triplet id, so identical facts collapse regardless of source.
pub fn triplet_id(head: &str, relation: &str, tail: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(head.as_bytes());
    hasher.update([0x1f]);
    hasher.update(relation.as_bytes());
    hasher.update([0x1f]);
    hasher.update(tail.as_bytes());
    let digest = hasher.finalize();
    format!("t{}", &hex::encode(digest)[..16])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub ordinal: u32,
    /// Wall-clock completion time; only recorded when the config opts in, since
    /// it breaks byte-reproducible output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unix_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub chat_provider: String,
    pub embedding_provider: String,
    pub embedding_dim: usize,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
}

impl BuildMeta {
    pub fn push_stage(&mut self, stage: &str, wall_clock: bool) {
        let unix_ms = wall_clock.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0)
        });
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            ordinal: self.stages.len() as u32,
            unix_ms,
        });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PyramidIndexes {
    pub kg: VectorIndex,
    pub chunks: VectorIndex,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgePyramid {
    pub schema: OntologySchema,
    pub instances: Vec<OntologyInstance>,
    pub kg: Vec<KgTriplet>,
    pub chunks: Vec<TextChunk>,
    pub indexes: PyramidIndexes,
    pub build_meta: BuildMeta,
}

impl KnowledgePyramid {
    pub fn new(schema: OntologySchema) -> Self {
        Self {
            schema,
            ..Self::default()
        }
    }

    pub fn chunk(&self, id: &str) -> Option<&TextChunk> {
        self.chunks.iter().find(|c| c.id == id)
    }

    pub fn triplet(&self, id: &str) -> Option<&KgTriplet> {
        self.kg.iter().find(|t| t.id == id)
    }

    /// Adds an instance after checking it against the schema and the chunk set.
    pub fn insert_instance(&mut self, instance: OntologyInstance) -> Result<()> {
        validate_instance(&self.schema, &instance).map_err(|v| Error::Invariant(v.to_string()))?;
        if self.chunk(&instance.source_chunk).is_none() {
            return Err(Error::Invariant(format!(
                "instance references unknown chunk `{}`",
                instance.source_chunk
            )));
        }
        self.instances.push(instance);
        Ok(())
    }

    /// Adds a triplet; returns false when an identical triplet already exists.
    pub fn insert_triplet(&mut self, triplet: KgTriplet) -> Result<bool> {
        triplet.check().map_err(Error::Invariant)?;
        if self.chunk(&triplet.source_chunk).is_none() {
            return Err(Error::Invariant(format!(
                "triplet references unknown chunk `{}`",
                triplet.source_chunk
            )));
        }
        if self.kg.iter().any(|t| t.id == triplet.id) {
            return Ok(false);
        }
        self.kg.push(triplet);
        Ok(true)
    }

    /// Removes a chunk that no triplet or instance refers to.
    pub fn remove_chunk(&mut self, id: &str) -> Result<TextChunk> {
        let referenced = self.kg.iter().any(|t| t.source_chunk == id)
            || self.instances.iter().any(|i| i.source_chunk == id);
        if referenced {
            return Err(Error::Invariant(format!(
                "chunk `{id}` is still referenced"
            )));
        }
        let pos = self
            .chunks
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("no chunk `{id}`")))?;
        let chunk = self.chunks.remove(pos);
        self.indexes.chunks.remove(id);
        Ok(chunk)
    }

    /// Checks every cross-layer invariant; used after load and in tests.
    pub fn check_invariants(&self) -> Result<()> {
        let violations = validate_schema(&self.schema);
        if !violations.is_empty() {
            return Err(Error::InvalidSchema(violations));
        }
        let chunk_ids: HashSet<&str> = self.chunks.iter().map(|c| c.id.as_str()).collect();
        if chunk_ids.len() != self.chunks.len() {
            return Err(Error::Invariant("duplicate chunk ids".into()));
        }
        for inst in &self.instances {
            validate_instance(&self.schema, inst).map_err(|v| Error::Invariant(v.to_string()))?;
            if !chunk_ids.contains(inst.source_chunk.as_str()) {
                return Err(Error::Invariant(format!(
                    "instance references unknown chunk `{}`",
                    inst.source_chunk
                )));
            }
        }
        let mut seen = HashSet::new();
        for t in &self.kg {
            t.check().map_err(Error::Invariant)?;
            if !chunk_ids.contains(t.source_chunk.as_str()) {
                return Err(Error::Invariant(format!(
                    "triplet {} references unknown chunk `{}`",
                    t.id, t.source_chunk
                )));
            }
            if !seen.insert(t.key()) {
                return Err(Error::Invariant(format!("duplicate triplet {}", t.id)));
            }
        }
        let dim = self.build_meta.embedding_dim;
        for (layer, index) in [("kg", &self.indexes.kg), ("chunks", &self.indexes.chunks)] {
            if !index.is_empty() && index.dim() != dim {
                return Err(Error::Invariant(format!(
                    "{layer} index dimension {} differs from build dimension {dim}",
                    index.dim()
                )));
            }
        }
        Ok(())
    }

    /// Layer sizes as `(chunks, triplets, instances)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.chunks.len(), self.kg.len(), self.instances.len())
    }

    pub fn instances_by_pair(&self) -> BTreeMap<(String, String), usize> {
        let mut out = BTreeMap::new();
        for i in &self.instances {
            *out.entry((i.subject_class.clone(), i.property.clone()))
                .or_insert(0) += 1;
        }
        out
    }
}

/// A path-qualified schema or instance problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}
