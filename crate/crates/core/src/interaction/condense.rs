use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ontology_phrase;
use crate::embedding::{embed, embed_all, Embedder, VectorIndex};
use crate::error::{Error, Result};
use crate::llm::{estimate_tokens, parse_triplet_lines, LlmGateway};
use crate::model::{KgTriplet, KnowledgePyramid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondensationRecord {
    pub anchor: (String, String),
    pub input_triplet_ids: Vec<String>,
    pub input_triplets: Vec<KgTriplet>,
    pub output_triplets: Vec<KgTriplet>,
    /// Whitespace tokens saved: input lines minus output lines.
    pub token_delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorNote {
    pub anchor: (String, String),
    pub outcome: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondensationReport {
    pub kg_before: usize,
    pub kg_after: usize,
    pub records: Vec<CondensationRecord>,
    pub notes: Vec<AnchorNote>,
}

impl CondensationReport {
    pub fn token_delta(&self) -> i64 {
        self.records.iter().map(|r| r.token_delta).sum()
    }
}

fn words(triplets: &[KgTriplet]) -> i64 {
    triplets.iter().map(|t| estimate_tokens(&t.line()) as i64).sum()
}

/// Credits every removed triplet to the new triplets it most plausibly became:
/// those with the same head and tail, else the same head, else the same tail,
/// else all of them. Returns the removed triplets behind each new one.
fn attribute<'a>(removed: &[&'a KgTriplet], fresh: &[KgTriplet]) -> Vec<Vec<&'a KgTriplet>> {
    let mut out = vec![Vec::new(); fresh.len()];
    let rules: [fn(&KgTriplet, &KgTriplet) -> bool; 3] = [
        |a, b| a.head == b.head && a.tail == b.tail,
        |a, b| a.head == b.head,
        |a, b| a.tail == b.tail,
    ];
    for r in removed {
        let targets: Vec<usize> = rules
            .iter()
            .map(|rule| (0..fresh.len()).filter(|&i| rule(r, &fresh[i])).collect::<Vec<_>>())
            .find(|hits| !hits.is_empty())
            .unwrap_or_else(|| (0..fresh.len()).collect());
        for i in targets {
            out[i].push(*r);
        }
    }
    out
}

/// Condenses the k-NN neighborhood of every ontology attribute.
///
/// Anchors are processed in schema order. A triplet belongs to at most one
/// neighborhood per pass: the first anchor that reaches it. Neighborhoods
/// with fewer than two unvisited triplets are left alone. Outputs equal to
/// an input keep that input unchanged; new triplets record the ids they
/// replace in `condensed_from`. Outputs larger than their input are refused.
pub fn condense(
    pyramid: &mut KnowledgePyramid,
    k_neighbors: usize,
    gateway: &LlmGateway,
    embedder: &dyn Embedder,
    domain: &str,
) -> Result<CondensationReport> {
    if k_neighbors == 0 {
        return Err(Error::InvalidInput("k_neighbors must be at least 1".into()));
    }
    let anchors = pyramid.schema.pairs();
    if anchors.is_empty() {
        return Err(Error::InvalidInput("condensation needs a non-empty schema".into()));
    }
    let mut report = CondensationReport {
        kg_before: pyramid.kg.len(),
        ..Default::default()
    };
    let cot = gateway.render("cot_condense", &[])?;

    let mut phrase_index = VectorIndex::new(embedder.dim());
    let texts: Vec<String> = pyramid
        .kg
        .iter()
        .map(|t| format!("{} {}", t.head, t.relation))
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    for (t, v) in pyramid.kg.iter().zip(embed_all(&refs, embedder)?) {
        phrase_index.insert(t.id.clone(), v)?;
    }

    let mut visited: HashSet<String> = HashSet::new();
    for (class, property) in anchors {
        let anchor = (class.clone(), property.clone());
        let note = |outcome: String| AnchorNote {
            anchor: anchor.clone(),
            outcome,
        };
        if phrase_index.is_empty() {
            report.notes.push(note("knowledge graph is empty".into()));
            continue;
        }
        let query = embed(&ontology_phrase(&class, &property), embedder)?;
        let mut inputs: Vec<KgTriplet> = phrase_index
            .top_k(&query, k_neighbors)?
            .into_iter()
            .filter(|(id, _)| !visited.contains(id))
            .filter_map(|(id, _)| pyramid.triplet(&id).cloned())
            .collect();
        if inputs.len() < 2 {
            report.notes.push(note(format!(
                "{} unvisited neighbor(s); nothing to merge",
                inputs.len()
            )));
            continue;
        }
        inputs.sort_by(|a, b| a.line().cmp(&b.line()));
        let block = inputs
            .iter()
            .map(KgTriplet::line)
            .collect::<Vec<_>>()
            .join("\n");
        let anchor_text = ontology_phrase(&class, &property);
        let reply = gateway.ask(
            "f_con",
            &[
                ("domain", domain),
                ("cot", &cot),
                ("anchor", &anchor_text),
                ("triplets", &block),
            ],
        )?;
        for t in &inputs {
            visited.insert(t.id.clone());
        }
        let parsed = parse_triplet_lines(&reply.text);
        let mut seen = HashSet::new();
        let outputs: Vec<(String, String, String)> = parsed
            .accepted
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();
        if outputs.is_empty() {
            log::warn!("{class}.{property}: condensation produced no triplets; keeping inputs");
            report.notes.push(note("no usable output; inputs kept".into()));
            continue;
        }
        if outputs.len() > inputs.len() {
            log::warn!(
                "{class}.{property}: condensation grew {} triplets into {}; refused",
                inputs.len(),
                outputs.len()
            );
            report.notes.push(note(format!(
                "refused: {} outputs for {} inputs",
                outputs.len(),
                inputs.len()
            )));
            continue;
        }

        let input_ids: HashSet<&str> = inputs.iter().map(|t| t.id.as_str()).collect();
        let output_ids: HashSet<String> = outputs
            .iter()
            .map(|(h, r, t)| crate::model::triplet_id(h, r, t))
            .collect();
        let removed: Vec<&KgTriplet> = inputs
            .iter()
            .filter(|t| !output_ids.contains(&t.id))
            .collect();
        if removed.is_empty() {
            report.notes.push(note("unchanged".into()));
            report.records.push(CondensationRecord {
                anchor: anchor.clone(),
                input_triplet_ids: inputs.iter().map(|t| t.id.clone()).collect(),
                input_triplets: inputs.clone(),
                output_triplets: inputs.clone(),
                token_delta: 0,
            });
            continue;
        }
        let removed_ids: Vec<String> = removed.iter().map(|t| t.id.clone()).collect();

        let mut output_triplets = Vec::new();
        let mut fresh: Vec<KgTriplet> = Vec::new();
        for (h, r, t) in outputs {
            let id = crate::model::triplet_id(&h, &r, &t);
            if input_ids.contains(id.as_str()) {
                output_triplets.push(pyramid.triplet(&id).cloned().expect("input triplet"));
            } else if let Some(existing) = pyramid.triplet(&id) {
                // Already present outside this neighborhood: merge into it.
                output_triplets.push(existing.clone());
                visited.insert(id);
            } else {
                let nt = KgTriplet::new(h, r, t, &removed[0].source_chunk);
                nt.check().map_err(Error::Invariant)?;
                output_triplets.push(nt.clone());
                fresh.push(nt);
            }
        }
        let sources = attribute(&removed, &fresh);
        for (nt, from) in fresh.iter_mut().zip(sources) {
            let from = if from.is_empty() { removed.clone() } else { from };
            if let Some(first) = from.first() {
                nt.source_chunk = first.source_chunk.clone();
            }
            nt.condensed_from = Some(from.iter().map(|t| t.id.clone()).collect());
            visited.insert(nt.id.clone());
        }
        for out in output_triplets.iter_mut() {
            if let Some(nt) = fresh.iter().find(|f| f.id == out.id) {
                *out = nt.clone();
            }
        }

        pyramid.kg.retain(|t| !removed_ids.contains(&t.id));
        for id in &removed_ids {
            pyramid.indexes.kg.remove(id);
            phrase_index.remove(id);
        }
        for nt in fresh {
            let phrase = format!("{} {}", nt.head, nt.relation);
            phrase_index.insert(nt.id.clone(), embed(&phrase, embedder)?)?;
            pyramid
                .indexes
                .kg
                .insert(nt.id.clone(), embed(&nt.sentence(), embedder)?)?;
            pyramid.kg.push(nt);
        }
        let token_delta = words(&inputs) - words(&output_triplets);
        report.notes.push(note(format!(
            "{} triplets condensed into {}",
            inputs.len(),
            output_triplets.len()
        )));
        report.records.push(CondensationRecord {
            anchor: anchor.clone(),
            input_triplet_ids: inputs.iter().map(|t| t.id.clone()).collect(),
            input_triplets: inputs,
            output_triplets,
            token_delta,
        });
    }
    report.kg_after = pyramid.kg.len();
    Ok(report)
}
