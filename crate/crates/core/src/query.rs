//! Top-down question answering: ontology first, then the knowledge graph
//! with an LLM sufficiency check, then raw text.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::QueryConfig;
use crate::embedding::{embed, Embedder, Vector};
use crate::error::{Error, Result};
use crate::llm::{parse_yes_no, Completion, LlmGateway};
use crate::model::{KgTriplet, KnowledgePyramid, TextChunk};
use crate::sparql::{execute_instances, generate_sparql, parse_sparql, BindingTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Ontology,
    #[serde(rename = "KG")]
    Kg,
    RawText,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Ontology, Layer::Kg, Layer::RawText];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Ontology => "Ontology",
            Layer::Kg => "KG",
            Layer::RawText => "RawText",
        }
    }

    fn rank(self) -> u8 {
        match self {
            Layer::Ontology => 0,
            Layer::Kg => 1,
            Layer::RawText => 2,
        }
    }

    /// True when `self` sits below `other` in the waterfall.
    pub fn is_below(self, other: Layer) -> bool {
        self.rank() > other.rank()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "items", rename_all = "snake_case")]
pub enum Evidence {
    Bindings(BindingTable),
    Triplets(Vec<KgTriplet>),
    Chunks(Vec<TextChunk>),
}

impl Evidence {
    pub fn layer(&self) -> Layer {
        match self {
            Evidence::Bindings(_) => Layer::Ontology,
            Evidence::Triplets(_) => Layer::Kg,
            Evidence::Chunks(_) => Layer::RawText,
        }
    }

    /// Lines handed to the synthesis prompt.
    pub fn lines(&self) -> Vec<String> {
        match self {
            Evidence::Bindings(table) => table.rows.iter().map(|r| r.join(", ")).collect(),
            Evidence::Triplets(ts) => ts.iter().map(KgTriplet::sentence).collect(),
            Evidence::Chunks(cs) => cs.iter().map(|c| c.text.clone()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Evidence::Bindings(t) => t.is_empty(),
            Evidence::Triplets(t) => t.is_empty(),
            Evidence::Chunks(c) => c.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Llm,
    Embed,
    Index,
    Execute,
}

/// One backend or index call, attributed to the layer that needed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub layer: Layer,
    pub stage: String,
    pub kind: CallKind,
    #[serde(default)]
    pub prompt_tokens: usize,
    #[serde(default)]
    pub completion_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Telemetry {
    pub events: Vec<StageEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparql_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<bool>,
}

impl Telemetry {
    pub fn calls_at(&self, layer: Layer) -> usize {
        self.events.iter().filter(|e| e.layer == layer).count()
    }

    /// Calls attributed to layers strictly below `resolved`.
    pub fn calls_below(&self, resolved: Layer) -> usize {
        self.events.iter().filter(|e| e.layer.is_below(resolved)).count()
    }

    pub fn tokens(&self) -> (usize, usize) {
        self.events.iter().fold((0, 0), |(p, c), e| {
            (p + e.prompt_tokens, c + e.completion_tokens)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsweredQuery {
    pub question: String,
    pub answer: String,
    pub resolved_layer: Layer,
    pub evidence: Evidence,
    pub telemetry: Telemetry,
}

/// Everything `answer` needs besides the pyramid.
pub struct QueryContext<'a> {
    pub gateway: &'a LlmGateway,
    pub embedder: &'a dyn Embedder,
    pub config: &'a QueryConfig,
    pub domain: &'a str,
    /// Extra instruction appended to synthesis prompts.
    pub format: &'a str,
    /// Record per-call latencies (off by default so output is reproducible).
    pub record_latency: bool,
}

struct Recorder {
    telemetry: Telemetry,
    record_latency: bool,
}

impl Recorder {
    fn timed<T>(
        &mut self,
        layer: Layer,
        stage: &str,
        kind: CallKind,
        f: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let out = f();
        let latency_us = self
            .record_latency
            .then(|| start.elapsed().as_micros() as u64);
        self.telemetry.events.push(StageEvent {
            layer,
            stage: stage.into(),
            kind,
            prompt_tokens: 0,
            completion_tokens: 0,
            latency_us,
            note: out.as_ref().err().map(|e| e.to_string()),
        });
        out
    }

    fn llm(
        &mut self,
        layer: Layer,
        stage: &str,
        f: impl FnOnce() -> Result<Completion>,
    ) -> Result<Completion> {
        let out = self.timed(layer, stage, CallKind::Llm, f);
        if let (Ok(c), Some(e)) = (&out, self.telemetry.events.last_mut()) {
            e.prompt_tokens = c.prompt_tokens;
            e.completion_tokens = c.completion_tokens;
        }
        out
    }
}

/// Asks whether `triplets` suffice to answer `question`. Unreadable verdicts count as no.
pub fn kg_agreement(question: &str, triplets: &[KgTriplet], gateway: &LlmGateway) -> Result<bool> {
    Ok(kg_agreement_reply(question, triplets, gateway)?.0)
}

fn kg_agreement_reply(
    question: &str,
    triplets: &[KgTriplet],
    gateway: &LlmGateway,
) -> Result<(bool, Completion)> {
    if triplets.is_empty() {
        return Err(Error::InvalidInput("agreement check needs at least one triplet".into()));
    }
    let lines = triplets
        .iter()
        .map(KgTriplet::sentence)
        .collect::<Vec<_>>()
        .join("\n");
    let reply = gateway.ask("query_kg", &[("question", question), ("triplets", &lines)])?;
    let verdict = match parse_yes_no(&reply.text) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("{e}; treating as no");
            false
        }
    };
    Ok((verdict, reply))
}

pub fn retrieve_kg_with(pyramid: &KnowledgePyramid, query: &Vector, k: usize) -> Result<Vec<KgTriplet>> {
    Ok(pyramid
        .indexes
        .kg
        .top_k(query, k)?
        .into_iter()
        .filter_map(|(id, _)| pyramid.triplet(&id).cloned())
        .collect())
}

pub fn retrieve_text_with(pyramid: &KnowledgePyramid, query: &Vector, k: usize) -> Result<Vec<TextChunk>> {
    Ok(pyramid
        .indexes
        .chunks
        .top_k(query, k)?
        .into_iter()
        .filter_map(|(id, _)| pyramid.chunk(&id).cloned())
        .collect())
}

/// The `k` triplets closest to the question.
pub fn retrieve_kg(
    question: &str,
    pyramid: &KnowledgePyramid,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<KgTriplet>> {
    retrieve_kg_with(pyramid, &embed(question, embedder)?, k)
}

/// The `k` chunks closest to the question.
pub fn retrieve_text(
    question: &str,
    pyramid: &KnowledgePyramid,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<TextChunk>> {
    retrieve_text_with(pyramid, &embed(question, embedder)?, k)
}

fn synthesis_reply(
    question: &str,
    evidence: &Evidence,
    gateway: &LlmGateway,
    format: &str,
) -> Result<Completion> {
    let template = match evidence.layer() {
        Layer::Ontology => "synthesize_ontology",
        Layer::Kg => "synthesize_kg",
        Layer::RawText => "synthesize_text",
    };
    let lines = evidence.lines().join("\n");
    gateway.ask(
        template,
        &[("question", question), ("evidence", &lines), ("format", format)],
    )
}

/// Answers from `evidence` with the layer's synthesis template, or returns
/// `abstention` when there is no evidence.
pub fn synthesize_answer(
    question: &str,
    evidence: &Evidence,
    gateway: &LlmGateway,
    format: &str,
    abstention: &str,
) -> Result<String> {
    if evidence.is_empty() {
        return Ok(abstention.to_string());
    }
    Ok(synthesis_reply(question, evidence, gateway, format)?.text.trim().to_string())
}

/// Runs the waterfall for one question.
pub fn answer(question: &str, pyramid: &KnowledgePyramid, ctx: &QueryContext<'_>) -> Result<AnsweredQuery> {
    if question.trim().is_empty() {
        return Err(Error::InvalidInput("question is empty".into()));
    }
    let mut rec = Recorder {
        telemetry: Telemetry::default(),
        record_latency: ctx.record_latency,
    };
    let failed = |stage: &str, e: Error| Error::QueryFailed {
        last_stage: stage.to_string(),
        source: Box::new(e),
    };

    // Ontology: generated SPARQL over the instance store.
    let mut evidence = None;
    let sparql = rec.timed(Layer::Ontology, "generate_sparql", CallKind::Llm, || {
        generate_sparql(question, &pyramid.schema, ctx.domain, ctx.gateway)
    });
    match sparql {
        Ok(text) => {
            rec.telemetry.sparql = Some(text.clone());
            match parse_sparql(&text) {
                Ok(q) => {
                    let mut table = execute_instances(&q, &pyramid.instances);
                    rec.telemetry.events.push(StageEvent {
                        layer: Layer::Ontology,
                        stage: "execute".into(),
                        kind: CallKind::Execute,
                        prompt_tokens: 0,
                        completion_tokens: 0,
                        latency_us: None,
                        note: Some(format!("{} row(s)", table.len())),
                    });
                    if !table.is_empty() {
                        table.rows.truncate(ctx.config.max_ontology_rows);
                        evidence = Some(Evidence::Bindings(table));
                    }
                }
                Err(e) => {
                    log::info!("generated query rejected: {e}");
                    rec.telemetry.sparql_error = Some(e.to_string());
                }
            }
        }
        Err(e) => {
            log::warn!("query generation failed: {e}");
            rec.telemetry.sparql_error = Some(e.to_string());
        }
    }
    let mut last_stage = "ontology";

    // Knowledge graph: nearest triplets plus a sufficiency verdict.
    let mut question_vec = None;
    if evidence.is_none() && !pyramid.indexes.kg.is_empty() {
        let qv = rec
            .timed(Layer::Kg, "embed_question", CallKind::Embed, || {
                embed(question, ctx.embedder)
            })
            .map_err(|e| failed(last_stage, e))?;
        let triplets = rec
            .timed(Layer::Kg, "retrieve_kg", CallKind::Index, || {
                retrieve_kg_with(pyramid, &qv, ctx.config.kg_top_k)
            })
            .map_err(|e| failed(last_stage, e))?;
        question_vec = Some(qv);
        if !triplets.is_empty() {
            let verdict = rec.llm(Layer::Kg, "query_kg", || {
                kg_agreement_reply(question, &triplets, ctx.gateway).map(|(_, c)| c)
            });
            let agreed = match verdict {
                Ok(c) => parse_yes_no(&c.text).unwrap_or(false),
                Err(e) => {
                    log::warn!("agreement check failed: {e}; treating as no");
                    false
                }
            };
            rec.telemetry.agreement = Some(agreed);
            if agreed {
                evidence = Some(Evidence::Triplets(triplets));
            }
        }
        last_stage = "kg";
    }

    // Raw text: nearest chunks, always accepted.
    let evidence = match evidence {
        Some(e) => e,
        None => {
            let qv = match question_vec {
                Some(v) => v,
                None => rec
                    .timed(Layer::RawText, "embed_question", CallKind::Embed, || {
                        embed(question, ctx.embedder)
                    })
                    .map_err(|e| failed(last_stage, e))?,
            };
            let chunks = if pyramid.indexes.chunks.is_empty() {
                Vec::new()
            } else {
                rec.timed(Layer::RawText, "retrieve_text", CallKind::Index, || {
                    retrieve_text_with(pyramid, &qv, ctx.config.text_top_k)
                })
                .map_err(|e| failed(last_stage, e))?
            };
            last_stage = "text";
            Evidence::Chunks(chunks)
        }
    };
    let layer = evidence.layer();
    let answer = if evidence.is_empty() {
        ctx.config.abstention.clone()
    } else {
        rec.llm(layer, "synthesize", || {
            synthesis_reply(question, &evidence, ctx.gateway, ctx.format)
        })
        .map_err(|e| failed(last_stage, e))?
        .text
        .trim()
        .to_string()
    };
    Ok(AnsweredQuery {
        question: question.to_string(),
        answer,
        resolved_layer: layer,
        evidence,
        telemetry: rec.telemetry,
    })
}

