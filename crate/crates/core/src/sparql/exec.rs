use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{BindingTable, SparqlQuery, Term, TYPE_PREDICATE};
use crate::model::OntologyInstance;

/// A `(subject, predicate, object)` fact as the evaluator sees it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Fact {
    pub fn new(s: impl Into<String>, p: impl Into<String>, o: impl Into<String>) -> Self {
        Self {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
        }
    }
}

/// Instance facts plus one `type` fact per distinct `(subject, class)`.
pub fn facts_from_instances(instances: &[OntologyInstance]) -> Vec<Fact> {
    let mut facts = BTreeSet::new();
    for i in instances {
        facts.insert(Fact::new(&i.subject_id, &i.property, &i.value.raw));
        facts.insert(Fact::new(&i.subject_id, TYPE_PREDICATE, &i.subject_class));
    }
    facts.into_iter().collect()
}

struct Join<'a> {
    query: &'a SparqlQuery,
    facts: &'a [Fact],
    slots: HashMap<&'a str, usize>,
    binding: Vec<Option<&'a str>>,
    rows: BTreeSet<Vec<String>>,
    select: Vec<usize>,
}

impl<'a> Join<'a> {
    fn unify(&mut self, term: &'a Term, value: &'a str, bound_here: &mut Vec<usize>) -> bool {
        match term {
            Term::Const(c) => c == value,
            Term::Var(v) => {
                let slot = self.slots[v.as_str()];
                match self.binding[slot] {
                    Some(existing) => existing == value,
                    None => {
                        self.binding[slot] = Some(value);
                        bound_here.push(slot);
                        true
                    }
                }
            }
        }
    }

    fn search(&mut self, depth: usize) {
        if depth == self.query.patterns.len() {
            let passes = self.query.filters.iter().all(|f| {
                let slot = self.slots[f.var.as_str()];
                self.binding[slot].is_some_and(|v| f.accepts(v))
            });
            if passes {
                let row = self
                    .select
                    .iter()
                    .map(|&s| self.binding[s].unwrap_or_default().to_string())
                    .collect();
                self.rows.insert(row);
            }
            return;
        }
        let query = self.query;
        let pattern = &query.patterns[depth];
        let facts = self.facts;
        for fact in facts {
            let mut bound_here = Vec::new();
            let ok = self.unify(&pattern.subject, &fact.subject, &mut bound_here)
                && self.unify(&pattern.predicate, &fact.predicate, &mut bound_here)
                && self.unify(&pattern.object, &fact.object, &mut bound_here);
            if ok {
                self.search(depth + 1);
            }
            for slot in bound_here {
                self.binding[slot] = None;
            }
        }
    }
}

/// Evaluates `query` over `facts`: a natural join of the patterns, filtered,
/// projected, deduplicated and sorted, then cut at LIMIT.
pub fn execute(query: &SparqlQuery, facts: &[Fact]) -> BindingTable {
    let vars = query.pattern_vars();
    let slots: HashMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let select = query
        .select_vars
        .iter()
        .filter_map(|v| slots.get(v.as_str()).copied())
        .collect();
    let mut join = Join {
        query,
        facts,
        binding: vec![None; vars.len()],
        slots,
        rows: BTreeSet::new(),
        select,
    };
    join.search(0);
    let mut rows: Vec<Vec<String>> = join.rows.into_iter().collect();
    if let Some(limit) = query.limit {
        rows.truncate(limit);
    }
    BindingTable {
        columns: query.select_vars.clone(),
        rows,
    }
}

pub fn execute_instances(query: &SparqlQuery, instances: &[OntologyInstance]) -> BindingTable {
    execute(query, &facts_from_instances(instances))
}
