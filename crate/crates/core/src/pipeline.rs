//! Configured end-to-end pipeline: build, complete, condense, answer, evaluate.

use std::sync::Arc;

use crate::config::PipelineConfig;
use crate::construction::{extract_instances, extract_kg, BuildReport};
use crate::embedding::{embed_all, Embedder, VectorIndex};
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, EvalReport, QaItem};
use crate::interaction::{
    apply_proposal, condense, run_completion, CompletionReport, CondensationReport, ProposalStatus,
    SchemaProposal,
};
use crate::llm::LlmGateway;
use crate::model::{validate_schema, BuildMeta, KnowledgePyramid, OntologySchema, TextChunk};
use crate::query::{answer, AnsweredQuery, QueryContext};

pub struct Pipeline {
    pub config: PipelineConfig,
    pub gateway: LlmGateway,
    pub embedder: Arc<dyn Embedder>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Build the ontology and text layers only.
    pub skip_kg: bool,
}

impl Pipeline {
    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let gateway = config.gateway()?;
        let embedder = config.embedder()?;
        Ok(Self {
            config,
            gateway,
            embedder,
        })
    }

    pub fn new(config: PipelineConfig, gateway: LlmGateway, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            config,
            gateway,
            embedder,
        }
    }

    fn embed_into(&self, index: &mut VectorIndex, items: Vec<(String, String)>) -> Result<()> {
        for batch in items.chunks(self.config.embedding.batch_size) {
            let texts: Vec<&str> = batch.iter().map(|(_, t)| t.as_str()).collect();
            for ((id, _), v) in batch.iter().zip(embed_all(&texts, self.embedder.as_ref())?) {
                index.insert(id.clone(), v)?;
            }
        }
        Ok(())
    }

    /// Rebuilds both vector indexes from the current layers.
    pub fn reindex(&self, pyramid: &mut KnowledgePyramid) -> Result<()> {
        let dim = self.embedder.dim();
        let mut chunks = VectorIndex::new(dim);
        self.embed_into(
            &mut chunks,
            pyramid.chunks.iter().map(|c| (c.id.clone(), c.text.clone())).collect(),
        )?;
        let mut kg = VectorIndex::new(dim);
        self.embed_into(
            &mut kg,
            pyramid.kg.iter().map(|t| (t.id.clone(), t.sentence())).collect(),
        )?;
        pyramid.indexes.chunks = chunks;
        pyramid.indexes.kg = kg;
        pyramid.build_meta.embedding_dim = dim;
        Ok(())
    }

    pub fn build(
        &self,
        chunks: Vec<TextChunk>,
        schema: OntologySchema,
        options: BuildOptions,
    ) -> Result<(KnowledgePyramid, BuildReport)> {
        let violations = validate_schema(&schema);
        if !violations.is_empty() {
            return Err(Error::InvalidSchema(violations));
        }
        let wall = self.config.record_wall_clock;
        let in_flight = self.config.llm.max_in_flight;
        let mut pyramid = KnowledgePyramid::new(schema);
        pyramid.build_meta = BuildMeta {
            chat_provider: self.gateway.backend.id().to_string(),
            embedding_provider: self.embedder.id().to_string(),
            embedding_dim: self.embedder.dim(),
            config: self.config.snapshot(),
            stages: Vec::new(),
        };
        let mut report = BuildReport {
            chunks: chunks.len(),
            ..Default::default()
        };
        pyramid.chunks = chunks;

        let instances = extract_instances(
            &pyramid.schema,
            &pyramid.chunks,
            &self.gateway,
            &self.config.domain,
            in_flight,
            &mut report,
        )?;
        for inst in instances {
            pyramid.insert_instance(inst)?;
        }
        pyramid.build_meta.push_stage("instances", wall);

        if !options.skip_kg {
            for t in extract_kg(&pyramid.chunks, &self.gateway, in_flight, &mut report) {
                pyramid.insert_triplet(t)?;
            }
            pyramid.build_meta.push_stage("kg", wall);
        }
        self.reindex(&mut pyramid)?;
        pyramid.build_meta.push_stage("index", wall);
        pyramid.check_invariants()?;
        Ok((pyramid, report))
    }

    pub fn complete(&self, pyramid: &mut KnowledgePyramid) -> Result<CompletionReport> {
        let report = run_completion(pyramid, &self.config, &self.gateway, self.embedder.as_ref())?;
        pyramid.build_meta.push_stage("complete", self.config.record_wall_clock);
        pyramid.check_invariants()?;
        Ok(report)
    }

    /// Applies a reviewed proposal. Returns the number of new instances.
    pub fn resolve_proposal(
        &self,
        pyramid: &mut KnowledgePyramid,
        proposal: &mut SchemaProposal,
        accept: bool,
    ) -> Result<usize> {
        if proposal.status != ProposalStatus::Pending {
            return Err(Error::InvalidInput(format!(
                "proposal {}.{} is already {:?}",
                proposal.proposed_class, proposal.proposed_property, proposal.status
            )));
        }
        if !accept {
            proposal.status = ProposalStatus::Rejected;
            return Ok(0);
        }
        proposal.status = ProposalStatus::Accepted;
        let added = apply_proposal(pyramid, proposal, &self.gateway, &self.config)?;
        pyramid.build_meta.push_stage("accept_proposal", self.config.record_wall_clock);
        pyramid.check_invariants()?;
        Ok(added)
    }

    pub fn condense(&self, pyramid: &mut KnowledgePyramid) -> Result<CondensationReport> {
        if pyramid.indexes.kg.len() != pyramid.kg.len() {
            self.reindex(pyramid)?;
        }
        let report = condense(
            pyramid,
            self.config.condensation.k_neighbors,
            &self.gateway,
            self.embedder.as_ref(),
            &self.config.domain,
        )?;
        pyramid.build_meta.push_stage("condense", self.config.record_wall_clock);
        pyramid.check_invariants()?;
        Ok(report)
    }

    pub fn query_context(&self) -> QueryContext<'_> {
        QueryContext {
            gateway: &self.gateway,
            embedder: self.embedder.as_ref(),
            config: &self.config.query,
            domain: &self.config.domain,
            format: &self.config.query.answer_format,
            record_latency: self.config.record_wall_clock,
        }
    }

    pub fn answer(&self, pyramid: &KnowledgePyramid, question: &str) -> Result<AnsweredQuery> {
        answer(question, pyramid, &self.query_context())
    }

    pub fn evaluate(&self, pyramid: &KnowledgePyramid, items: &[QaItem]) -> EvalReport {
        run_benchmark(
            items,
            pyramid,
            &self.query_context(),
            self.config.llm.max_in_flight,
            self.config.snapshot(),
        )
    }
}
