//! Layered knowledge base built from a text corpus: an ontology layer, a
//! knowledge-graph layer and the raw text, with cross-layer completion and
//! condensation and a top-down retrieval path that stops at the first layer
//! able to answer.

pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod llm;
pub mod construction;
pub mod interaction;
pub mod model;
pub mod pipeline;
pub mod query;
pub mod sparql;

pub use config::PipelineConfig;
pub use embedding::{cosine, Embedder, GaussianModel, Vector, VectorIndex};
pub use error::{BackendError, Error, ErrorClass, Result};
pub use model::{
    KgTriplet, KnowledgePyramid, OntologyInstance, OntologySchema, TextChunk, Value, ValueKind,
};
pub use eval::{EvalReport, QaItem, QaKind};
pub use pipeline::{BuildOptions, Pipeline};
pub use query::{AnsweredQuery, Evidence, Layer};
