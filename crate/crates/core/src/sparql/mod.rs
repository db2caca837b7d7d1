//! A small SPARQL subset: basic graph patterns, equality and
//! case-insensitive containment filters, and LIMIT, evaluated directly over
//! ontology instances.

mod exec;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::llm::{strip_code_fence, LlmGateway};
use crate::model::OntologySchema;

pub use exec::{execute, execute_instances, facts_from_instances, Fact};
pub use parser::parse_sparql;

/// Predicate name used for class membership (`a` / `rdf:type`).
pub const TYPE_PREDICATE: &str = "type";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SparqlError {
    #[error("unsupported SPARQL construct `{0}`")]
    Unsupported(String),
    #[error("malformed SPARQL: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl TriplePattern {
    pub fn terms(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    Equals,
    /// Case-insensitive substring test.
    Contains,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub var: String,
    pub op: FilterOp,
    pub literal: String,
}

impl Filter {
    pub fn accepts(&self, value: &str) -> bool {
        match self.op {
            FilterOp::Equals => value == self.literal,
            FilterOp::Contains => value.to_lowercase().contains(&self.literal.to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparqlQuery {
    pub select_vars: Vec<String>,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Filter>,
    pub limit: Option<usize>,
}

impl SparqlQuery {
    /// Variables in order of first appearance across the patterns.
    pub fn pattern_vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.patterns {
            for t in p.terms() {
                if let Some(v) = t.var() {
                    if !out.iter().any(|o| o == v) {
                        out.push(v.to_string());
                    }
                }
            }
        }
        out
    }

    pub fn check(&self) -> Result<(), SparqlError> {
        if self.patterns.is_empty() {
            return Err(SparqlError::Malformed("WHERE has no triple patterns".into()));
        }
        if self.select_vars.is_empty() {
            return Err(SparqlError::Malformed("SELECT lists no variables".into()));
        }
        if self.limit == Some(0) {
            return Err(SparqlError::Malformed("LIMIT must be positive".into()));
        }
        let vars = self.pattern_vars();
        let unbound = self
            .select_vars
            .iter()
            .chain(self.filters.iter().map(|f| &f.var))
            .find(|v| !vars.contains(v));
        match unbound {
            Some(v) => Err(SparqlError::Malformed(format!(
                "variable ?{v} does not appear in any pattern"
            ))),
            None => Ok(()),
        }
    }
}

fn write_term(f: &mut fmt::Formatter<'_>, term: &Term, position: usize) -> fmt::Result {
    match term {
        Term::Var(v) => write!(f, "?{v}"),
        Term::Const(c) if position == 1 => write!(f, "<{c}>"),
        Term::Const(c) => write_literal(f, c),
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for ch in s.chars() {
        match ch {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

/// Canonical text form; `parse_sparql` reads it back to an equal query.
impl fmt::Display for SparqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT")?;
        for v in &self.select_vars {
            write!(f, " ?{v}")?;
        }
        f.write_str(" WHERE {")?;
        for (i, p) in self.patterns.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { " . " })?;
            for (pos, t) in p.terms().into_iter().enumerate() {
                if pos > 0 {
                    f.write_str(" ")?;
                }
                write_term(f, t, pos)?;
            }
        }
        for filter in &self.filters {
            match filter.op {
                FilterOp::Equals => write!(f, " FILTER(?{} = ", filter.var)?,
                FilterOp::Contains => write!(f, " FILTER(CONTAINS(LCASE(?{}), ", filter.var)?,
            }
            write_literal(f, &filter.literal)?;
            f.write_str(match filter.op {
                FilterOp::Equals => ")",
                FilterOp::Contains => "))",
            })?;
        }
        f.write_str(" }")?;
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}

/// Result rows, one column per selected variable, deduplicated and sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl BindingTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// One `?var = value; ...` line per row.
    pub fn lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|row| {
                self.columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| format!("{c} = {v}"))
                    .collect::<Vec<_>>()
                    .join("; ")
            })
            .collect()
    }
}

fn describe_properties(schema: &OntologySchema) -> (String, String) {
    let object = schema
        .object_properties
        .iter()
        .map(|p| format!("{} ({} -> {})", p.name, p.domain, p.range))
        .collect::<Vec<_>>()
        .join(", ");
    let data = schema
        .data_properties
        .iter()
        .map(|p| format!("{} ({}, {})", p.name, p.domain, p.kind))
        .collect::<Vec<_>>()
        .join(", ");
    (object, data)
}

/// Asks the backend for a SPARQL query answering `question` over `schema`.
pub fn generate_sparql(
    question: &str,
    schema: &OntologySchema,
    domain: &str,
    gateway: &LlmGateway,
) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::InvalidInput("question is empty".into()));
    }
    let (object, data) = describe_properties(schema);
    let classes = schema.classes.join(", ");
    let completion = gateway.ask(
        "query_onto",
        &[
            ("question", question),
            ("domain", domain),
            ("namespace", &schema.namespace),
            ("classes", &classes),
            ("object_properties", &object),
            ("data_properties", &data),
        ],
    )?;
    Ok(strip_code_fence(&completion.text))
}
