//! Initial layer construction: ontology instances from every `(class,
//! property)` pair and paragraph, and knowledge-graph triplets from the
//! paraphrase, entity, relation and disambiguation prompt cascade.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{parse_instance_lines, parse_lines, parse_triplet_lines, LlmGateway};
use crate::model::{
    validate_instance, KgTriplet, OntologyInstance, OntologySchema, PropertyRef,
    TextChunk, Value,
};

/// Runs `f` over `items` on at most `max_in_flight` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    max_in_flight: usize,
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R> {
    if max_in_flight <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight)
        .build()
    {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedChunk {
    pub chunk: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub chunk: String,
    pub stage: String,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedTriplet {
    pub chunk: String,
    pub triplet: String,
    pub reason: String,
}

/// Per-stage counts and everything that was skipped, rejected or flagged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub chunks: usize,
    pub schema_pairs: usize,
    pub instance_prompts: usize,
    pub instances_parsed: usize,
    pub instances_duplicate: usize,
    pub instances: usize,
    pub claims: usize,
    pub entities: usize,
    pub raw_triplets: usize,
    pub triplets_after_disambiguation: usize,
    pub triplets_cross_chunk_duplicates: usize,
    pub triplets: usize,
    pub low_yield_chunks: Vec<String>,
    pub disambiguation_skipped: Vec<String>,
    pub skipped: Vec<SkippedChunk>,
    pub rejected: Vec<RejectedLine>,
    pub flagged: Vec<FlaggedTriplet>,
}

fn same_name(a: &str, b: &str) -> bool {
    let norm = |s: &str| s.trim().to_lowercase().replace([' ', '-'], "_");
    norm(a) == norm(b)
}

fn instance_values(
    schema: &OntologySchema,
    class: &str,
    property: &str,
    raw: &str,
) -> Option<Value> {
    match schema.property(class, property)? {
        PropertyRef::Object(_) => Some(Value::entity(raw)),
        PropertyRef::Data(p) => Some(Value::literal(p.kind, raw)),
    }
}

struct ChunkInstances {
    prompts: usize,
    parsed: Vec<OntologyInstance>,
    rejected: Vec<RejectedLine>,
    skipped: Vec<SkippedChunk>,
}

fn chunk_instances(
    schema: &OntologySchema,
    pairs: &[(String, String)],
    chunk: &TextChunk,
    gateway: &LlmGateway,
    domain: &str,
) -> ChunkInstances {
    let mut out = ChunkInstances {
        prompts: 0,
        parsed: Vec::new(),
        rejected: Vec::new(),
        skipped: Vec::new(),
    };
    for (class, property) in pairs {
        out.prompts += 1;
        let reply = gateway.ask(
            "f_ins",
            &[
                ("paragraph", &chunk.text),
                ("domain", domain),
                ("class", class),
                ("property", property),
            ],
        );
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                out.skipped.push(SkippedChunk {
                    chunk: chunk.id.clone(),
                    stage: format!("f_ins {class}.{property}"),
                    error: e.to_string(),
                });
                continue;
            }
        };
        let parse = parse_instance_lines(&reply.text);
        let reject = |line: String| RejectedLine {
            chunk: chunk.id.clone(),
            stage: "f_ins".into(),
            line,
        };
        out.rejected.extend(parse.rejected.into_iter().map(reject));
        for (subject, prop, raw) in parse.accepted {
            if !same_name(&prop, property) {
                out.rejected.push(reject(format!("{subject} | {prop} | {raw}")));
                continue;
            }
            let Some(value) = instance_values(schema, class, property, &raw) else {
                continue;
            };
            let instance = OntologyInstance {
                subject_id: subject.clone(),
                subject_class: class.clone(),
                property: property.clone(),
                value,
                source_chunk: chunk.id.clone(),
            };
            match validate_instance(schema, &instance) {
                Ok(()) => out.parsed.push(instance),
                Err(_) => out.rejected.push(reject(format!("{subject} | {prop} | {raw}"))),
            }
        }
    }
    out
}

/// Instances for the given pairs over all chunks, deduplicated on
/// `(class, subject, property, value)` with first-seen provenance.
pub fn extract_instances_for(
    schema: &OntologySchema,
    pairs: &[(String, String)],
    chunks: &[TextChunk],
    gateway: &LlmGateway,
    domain: &str,
    max_in_flight: usize,
    report: &mut BuildReport,
) -> Result<Vec<OntologyInstance>> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("schema has no (class, property) pairs".into()));
    }
    let per_chunk = par_map(chunks, max_in_flight, |chunk| {
        chunk_instances(schema, pairs, chunk, gateway, domain)
    });
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in per_chunk {
        report.instance_prompts += c.prompts;
        report.instances_parsed += c.parsed.len();
        report.rejected.extend(c.rejected);
        report.skipped.extend(c.skipped);
        for inst in c.parsed {
            let key = (
                inst.subject_class.clone(),
                inst.subject_id.clone(),
                inst.property.clone(),
                inst.value.raw.clone(),
            );
            if seen.insert(key) {
                out.push(inst);
            } else {
                report.instances_duplicate += 1;
            }
        }
    }
    Ok(out)
}

pub fn extract_instances(
    schema: &OntologySchema,
    chunks: &[TextChunk],
    gateway: &LlmGateway,
    domain: &str,
    max_in_flight: usize,
    report: &mut BuildReport,
) -> Result<Vec<OntologyInstance>> {
    report.schema_pairs = schema.pair_count();
    let instances = extract_instances_for(
        schema,
        &schema.pairs(),
        chunks,
        gateway,
        domain,
        max_in_flight,
        report,
    )?;
    report.instances = instances.len();
    Ok(instances)
}

/// Claim sentences for one chunk.
pub fn paraphrase(chunk: &TextChunk, gateway: &LlmGateway) -> Result<Vec<String>> {
    let reply = gateway.ask("f_par", &[("paragraph", &chunk.text)])?;
    Ok(parse_lines(&reply.text))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityList {
    pub entities: Vec<String>,
    /// Entities that broke the no-comma rule.
    pub rejected: Vec<String>,
}

pub fn extract_entities(claims: &[String], gateway: &LlmGateway) -> Result<EntityList> {
    let mut out = EntityList::default();
    if claims.is_empty() {
        return Ok(out);
    }
    let reply = gateway.ask("f_ent", &[("claims", &claims.join("\n"))])?;
    let mut seen = HashSet::new();
    for entity in parse_lines(&reply.text) {
        if entity.contains(crate::model::FIELD_SEPARATOR) {
            out.rejected.push(entity);
        } else if seen.insert(entity.to_lowercase()) {
            out.entities.push(entity);
        }
    }
    Ok(out)
}

pub type RawTriplet = (String, String, String);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationParse {
    pub triplets: Vec<RawTriplet>,
    /// Indexes into `triplets` whose head or tail is not a listed entity.
    pub off_list: Vec<usize>,
    pub rejected: Vec<String>,
}

pub fn complete_relations(
    claims: &[String],
    entities: &[String],
    gateway: &LlmGateway,
) -> Result<RelationParse> {
    let mut out = RelationParse::default();
    if claims.is_empty() {
        return Ok(out);
    }
    let reply = gateway.ask(
        "f_rel",
        &[("claims", &claims.join("\n")), ("entities", &entities.join("\n"))],
    )?;
    let parse = parse_triplet_lines(&reply.text);
    let known: HashSet<String> = entities.iter().map(|e| e.to_lowercase()).collect();
    for (i, (h, _, t)) in parse.accepted.iter().enumerate() {
        if !known.contains(&h.to_lowercase()) || !known.contains(&t.to_lowercase()) {
            out.off_list.push(i);
        }
    }
    out.triplets = parse.accepted;
    out.rejected = parse.rejected;
    Ok(out)
}

fn dedup_exact(triplets: &[RawTriplet]) -> Vec<RawTriplet> {
    let mut seen = HashSet::new();
    triplets
        .iter()
        .filter(|t| seen.insert((*t).clone()))
        .cloned()
        .collect()
}

fn triplet_block(triplets: &[RawTriplet]) -> String {
    triplets
        .iter()
        .map(|(h, r, t)| format!("{h}, {r}, {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Disambiguation {
    pub triplets: Vec<RawTriplet>,
    /// Set when the backend output was unusable and the inputs were kept.
    pub skipped: bool,
    pub rejected: Vec<String>,
}

/// Removes exact repeats locally, then asks the backend to unify synonymous
/// relations and drop semantic repeats.
pub fn disambiguate(
    triplets: &[RawTriplet],
    entities: &[String],
    gateway: &LlmGateway,
) -> Result<Disambiguation> {
    let input = dedup_exact(triplets);
    if input.is_empty() {
        return Ok(Disambiguation::default());
    }
    let reply = gateway.ask(
        "f_dis",
        &[("triplets", &triplet_block(&input)), ("entities", &entities.join("\n"))],
    )?;
    let parse = parse_triplet_lines(&reply.text);
    if parse.accepted.is_empty() {
        log::warn!("disambiguation returned no triplets; keeping {} originals", input.len());
        return Ok(Disambiguation {
            triplets: input,
            skipped: true,
            rejected: parse.rejected,
        });
    }
    Ok(Disambiguation {
        triplets: dedup_exact(&parse.accepted),
        skipped: false,
        rejected: parse.rejected,
    })
}

#[derive(Default)]
struct ChunkKg {
    triplets: Vec<KgTriplet>,
    claims: usize,
    entities: usize,
    raw: usize,
    low_yield: bool,
    disambiguation_skipped: bool,
    rejected: Vec<RejectedLine>,
    flagged: Vec<FlaggedTriplet>,
    skipped: Option<SkippedChunk>,
}

fn chunk_kg(chunk: &TextChunk, gateway: &LlmGateway) -> ChunkKg {
    let mut out = ChunkKg::default();
    let fail = |stage: &str, e: Error| SkippedChunk {
        chunk: chunk.id.clone(),
        stage: stage.into(),
        error: e.to_string(),
    };
    let claims = match paraphrase(chunk, gateway) {
        Ok(c) => c,
        Err(e) => {
            out.skipped = Some(fail("f_par", e));
            return out;
        }
    };
    out.claims = claims.len();
    if claims.is_empty() {
        out.low_yield = true;
        return out;
    }
    let entities = match extract_entities(&claims, gateway) {
        Ok(e) => e,
        Err(e) => {
            out.skipped = Some(fail("f_ent", e));
            return out;
        }
    };
    out.entities = entities.entities.len();
    let reject = |stage: &str, line: String| RejectedLine {
        chunk: chunk.id.clone(),
        stage: stage.into(),
        line,
    };
    out.rejected
        .extend(entities.rejected.into_iter().map(|l| reject("f_ent", l)));
    let relations = match complete_relations(&claims, &entities.entities, gateway) {
        Ok(r) => r,
        Err(e) => {
            out.skipped = Some(fail("f_rel", e));
            return out;
        }
    };
    out.raw = relations.triplets.len();
    out.rejected
        .extend(relations.rejected.into_iter().map(|l| reject("f_rel", l)));
    for &i in &relations.off_list {
        let (h, r, t) = &relations.triplets[i];
        out.flagged.push(FlaggedTriplet {
            chunk: chunk.id.clone(),
            triplet: format!("{h}, {r}, {t}"),
            reason: "head or tail is not an extracted entity".into(),
        });
    }
    let refined = match disambiguate(&relations.triplets, &entities.entities, gateway) {
        Ok(d) => d,
        Err(e) => {
            out.skipped = Some(fail("f_dis", e));
            return out;
        }
    };
    out.disambiguation_skipped = refined.skipped;
    out.rejected
        .extend(refined.rejected.into_iter().map(|l| reject("f_dis", l)));
    out.triplets = refined
        .triplets
        .into_iter()
        .map(|(h, r, t)| KgTriplet::new(h, r, t, &chunk.id))
        .collect();
    if out.triplets.is_empty() {
        out.low_yield = true;
    }
    out
}

/// Runs the triplet cascade per chunk, then removes cross-chunk repeats
/// keeping the first chunk's provenance.
pub fn extract_kg(
    chunks: &[TextChunk],
    gateway: &LlmGateway,
    max_in_flight: usize,
    report: &mut BuildReport,
) -> Vec<KgTriplet> {
    let per_chunk = par_map(chunks, max_in_flight, |chunk| chunk_kg(chunk, gateway));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (chunk, c) in chunks.iter().zip(per_chunk) {
        report.claims += c.claims;
        report.entities += c.entities;
        report.raw_triplets += c.raw;
        report.triplets_after_disambiguation += c.triplets.len();
        if c.low_yield {
            report.low_yield_chunks.push(chunk.id.clone());
        }
        if c.disambiguation_skipped {
            report.disambiguation_skipped.push(chunk.id.clone());
        }
        report.rejected.extend(c.rejected);
        report.flagged.extend(c.flagged);
        report.skipped.extend(c.skipped);
        for t in c.triplets {
            if t.check().is_err() {
                report.rejected.push(RejectedLine {
                    chunk: chunk.id.clone(),
                    stage: "f_dis".into(),
                    line: t.line(),
                });
            } else if seen.insert(t.id.clone()) {
                out.push(t);
            } else {
                report.triplets_cross_chunk_duplicates += 1;
            }
        }
    }
    report.triplets = out.len();
    out
}
