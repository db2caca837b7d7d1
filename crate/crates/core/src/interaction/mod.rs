//! Cross-layer interaction. Completion finds regions of embedding space that
//! the knowledge graph covers densely and the ontology does not, clusters
//! them, and turns each cluster into a candidate schema property.
//! Condensation merges redundant triplets around each ontology attribute.

mod condense;
mod kmedoids;

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::construction::{extract_instances_for, BuildReport};
use crate::embedding::{
    embed_all, fit_in_basis, principal_basis, priority_score, Embedder, GaussianModel, Vector,
};
use crate::error::{Error, Result};
use crate::llm::{parse_lines, strip_code_fence, LlmGateway};
use crate::model::{
    validate_schema, DataProperty, KgTriplet, KnowledgePyramid, OntologySchema, ValueKind,
};

pub use condense::{condense, CondensationRecord, CondensationReport};
pub use kmedoids::{
    cosine_distances, default_cluster_count, k_medoids, k_medoids_with_distances, medoid_cost,
    Clustering,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Ontology,
    Kg,
}

/// Subject-plus-relation text from one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub text: String,
    pub origin: Origin,
    /// `class.property` for ontology phrases; triplet ids for KG phrases.
    /// Its length is the phrase multiplicity.
    pub source_refs: Vec<String>,
}

impl Phrase {
    pub fn multiplicity(&self) -> usize {
        self.source_refs.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhrasePoint {
    pub phrase: Phrase,
    pub vector: Vector,
}

pub fn ontology_phrase(class: &str, property: &str) -> String {
    format!("{class} {}", property.replace('_', " "))
}

/// One phrase per `(class, property)`: `"{class} {property}"` with underscores as spaces.
pub fn ontology_phrases(schema: &OntologySchema) -> Vec<Phrase> {
    schema
        .pairs()
        .into_iter()
        .map(|(class, property)| Phrase {
            text: ontology_phrase(&class, &property),
            origin: Origin::Ontology,
            source_refs: vec![format!("{class}.{property}")],
        })
        .collect()
}

/// One phrase per distinct `"{head} {relation}"`, in first-seen order.
pub fn kg_phrases(kg: &[KgTriplet]) -> Vec<Phrase> {
    let mut out: Vec<Phrase> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for t in kg {
        let text = format!("{} {}", t.head, t.relation);
        match index.get(&text) {
            Some(&i) => out[i].source_refs.push(t.id.clone()),
            None => {
                index.insert(text.clone(), out.len());
                out.push(Phrase {
                    text,
                    origin: Origin::Kg,
                    source_refs: vec![t.id.clone()],
                });
            }
        }
    }
    out
}

pub fn embed_phrases(phrases: Vec<Phrase>, embedder: &dyn Embedder) -> Result<Vec<PhrasePoint>> {
    let texts: Vec<&str> = phrases.iter().map(|p| p.text.as_str()).collect();
    let vectors = embed_all(&texts, embedder)?;
    Ok(phrases
        .into_iter()
        .zip(vectors)
        .map(|(phrase, vector)| PhrasePoint { phrase, vector })
        .collect())
}

/// Which KG points count as selected for clustering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The top `ceil(fraction * n)` points by priority.
    TopFraction(f64),
    /// Every point whose priority exceeds the threshold.
    Threshold(f64),
}

impl Selection {
    pub fn from_config(config: &PipelineConfig) -> Self {
        match config.completion.threshold {
            Some(t) => Selection::Threshold(t),
            None => Selection::TopFraction(config.completion.select_fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionCandidate {
    pub phrase: Phrase,
    pub priority: f64,
    pub selected: bool,
    pub cluster_id: Option<usize>,
}

/// One Gaussian per layer, both fitted in the same principal basis.
#[derive(Debug, Clone)]
pub struct LayerModels {
    pub ontology: GaussianModel,
    pub kg: GaussianModel,
}

fn expanded(points: &[PhrasePoint]) -> Result<Vec<Vector>> {
    let mut out = Vec::new();
    for p in points {
        let v = p.vector.normalized()?;
        for _ in 0..p.phrase.multiplicity().max(1) {
            out.push(v.clone());
        }
    }
    Ok(out)
}

/// Scales each basis column so the pooled points have unit variance along it.
///
/// Raw principal coordinates of tight phrase clusters give densities far
/// above one, where the `F log F` terms of the priority change sign; unit
/// pooled variance keeps both layer densities in a comparable range.
fn whitened(pooled: &[Vector], mut basis: DMatrix<f64>) -> DMatrix<f64> {
    let n = pooled.len() as f64;
    for mut col in basis.column_iter_mut() {
        let proj: Vec<f64> = pooled
            .iter()
            .map(|p| p.as_slice().iter().zip(col.iter()).map(|(a, b)| a * b).sum())
            .collect();
        let mean = proj.iter().sum::<f64>() / n;
        let var = proj.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var > 0.0 {
            col /= var.sqrt();
        }
    }
    basis
}

/// Fits both layer densities on the pooled, whitened principal basis. Vectors are unit
/// normalized first and repeated phrases count with their multiplicity.
pub fn fit_layers(
    o_points: &[PhrasePoint],
    k_points: &[PhrasePoint],
    ridge: f64,
    max_dim: usize,
) -> Result<LayerModels> {
    let o = expanded(o_points)?;
    let k = expanded(k_points)?;
    if o.len() < 2 || k.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "each layer needs at least 2 points (ontology {}, kg {})",
            o.len(),
            k.len()
        )));
    }
    let pooled: Vec<Vector> = o.iter().chain(&k).cloned().collect();
    let basis = whitened(&pooled, principal_basis(&pooled, max_dim)?);
    Ok(LayerModels {
        ontology: fit_in_basis(&o, &basis, ridge)?,
        kg: fit_in_basis(&k, &basis, ridge)?,
    })
}

/// Scores every KG point, sorts by descending priority (ties by phrase) and
/// marks the selected head. Only positive priorities are ever selected.
pub fn score_candidates(
    models: &LayerModels,
    k_points: &[PhrasePoint],
    selection: Selection,
) -> Result<Vec<CompletionCandidate>> {
    let mut out = Vec::with_capacity(k_points.len());
    for p in k_points {
        let x = p.vector.normalized()?;
        let priority = priority_score(&models.ontology, &models.kg, &x)?;
        if !priority.is_finite() {
            return Err(Error::Numeric(format!("non-finite priority for `{}`", p.phrase.text)));
        }
        out.push(CompletionCandidate {
            phrase: p.phrase.clone(),
            priority,
            selected: false,
            cluster_id: None,
        });
    }
    out.sort_by(|a, b| {
        b.priority
            .total_cmp(&a.priority)
            .then_with(|| a.phrase.text.cmp(&b.phrase.text))
    });
    let head = match selection {
        Selection::TopFraction(f) => (f * out.len() as f64).ceil() as usize,
        Selection::Threshold(_) => out.len(),
    };
    for c in out.iter_mut().take(head) {
        c.selected = match selection {
            Selection::TopFraction(_) => c.priority > 0.0,
            Selection::Threshold(t) => c.priority > t && c.priority > 0.0,
        };
    }
    Ok(out)
}

pub fn rank_candidates(
    o_points: &[PhrasePoint],
    k_points: &[PhrasePoint],
    ridge: f64,
    max_dim: usize,
    selection: Selection,
) -> Result<Vec<CompletionCandidate>> {
    let models = fit_layers(o_points, k_points, ridge, max_dim)?;
    score_candidates(&models, k_points, selection)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaProposal {
    pub proposed_class: String,
    pub proposed_property: String,
    pub supporting_triplets: Vec<String>,
    pub medoid_phrase: String,
    pub status: ProposalStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub medoid_phrase: String,
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalNote {
    pub medoid_phrase: String,
    pub outcome: String,
}

fn parse_naming(text: &str) -> std::result::Result<Option<(String, String)>, String> {
    let cleaned = strip_code_fence(text);
    let Some(line) = parse_lines(&cleaned).into_iter().next() else {
        return Err("empty naming response".into());
    };
    if line.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let parts: Vec<&str> = line.split('|').map(str::trim).collect();
    match parts.as_slice() {
        [class, property] if !class.is_empty() && !property.is_empty() => {
            let valid = |s: &str| {
                s.chars()
                    .all(|c| c.is_alphanumeric() || c == '_' || c == ' ' || c == '-')
            };
            if !valid(class) || !valid(property) {
                return Err(format!("unusable names in `{line}`"));
            }
            Ok(Some((
                class.split_whitespace().collect::<Vec<_>>().join("_"),
                property
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join("_")
                    .replace('-', "_"),
            )))
        }
        _ => Err(format!("cannot read `Class | property` from `{line}`")),
    }
}

/// Asks the backend to name every cluster; proposals that collide with an
/// existing pair (or an earlier proposal) are dropped.
pub fn propose_schema_updates(
    clusters: &[(PhrasePoint, Vec<PhrasePoint>)],
    schema: &OntologySchema,
    gateway: &LlmGateway,
    domain: &str,
) -> Result<(Vec<SchemaProposal>, Vec<ProposalNote>)> {
    let classes = schema.classes.join(", ");
    let properties = schema
        .pairs()
        .into_iter()
        .map(|(c, p)| format!("{c}.{p}"))
        .collect::<Vec<_>>()
        .join(", ");
    let mut proposals: Vec<SchemaProposal> = Vec::new();
    let mut notes = Vec::new();
    for (medoid, members) in clusters {
        let phrases = members
            .iter()
            .map(|m| m.phrase.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let note = |outcome: String| ProposalNote {
            medoid_phrase: medoid.phrase.text.clone(),
            outcome,
        };
        let reply = gateway.ask(
            "name_cluster",
            &[
                ("domain", domain),
                ("phrases", &phrases),
                ("classes", &classes),
                ("properties", &properties),
            ],
        )?;
        match parse_naming(&reply.text) {
            Err(e) => notes.push(note(format!("skipped: {e}"))),
            Ok(None) => notes.push(note("declined by backend".into())),
            Ok(Some((class, property))) => {
                let collides = schema.property(&class, &property).is_some()
                    || proposals
                        .iter()
                        .any(|p| p.proposed_class == class && p.proposed_property == property);
                if collides {
                    notes.push(note(format!("dropped: {class}.{property} already exists")));
                    continue;
                }
                let supporting: Vec<String> = members
                    .iter()
                    .flat_map(|m| m.phrase.source_refs.iter().cloned())
                    .collect();
                notes.push(note(format!("proposed {class}.{property}")));
                proposals.push(SchemaProposal {
                    proposed_class: class,
                    proposed_property: property,
                    supporting_triplets: supporting,
                    medoid_phrase: medoid.phrase.text.clone(),
                    status: ProposalStatus::Pending,
                });
            }
        }
    }
    Ok((proposals, notes))
}

/// Adds an accepted proposal to the schema as a text data property and
/// extracts its instances. Pending or rejected proposals change nothing.
/// Returns the number of new instances.
pub fn apply_proposal(
    pyramid: &mut KnowledgePyramid,
    proposal: &SchemaProposal,
    gateway: &LlmGateway,
    config: &PipelineConfig,
) -> Result<usize> {
    if proposal.status != ProposalStatus::Accepted {
        return Ok(0);
    }
    let class = &proposal.proposed_class;
    let property = &proposal.proposed_property;
    if pyramid.schema.property(class, property).is_some() {
        return Err(Error::InvalidInput(format!("{class}.{property} already exists")));
    }
    let mut schema = pyramid.schema.clone();
    if !schema.has_class(class) {
        schema.classes.push(class.clone());
    }
    schema.data_properties.push(DataProperty {
        name: property.clone(),
        domain: class.clone(),
        kind: ValueKind::Text,
    });
    let violations = validate_schema(&schema);
    if !violations.is_empty() {
        return Err(Error::InvalidSchema(violations));
    }
    let mut scratch = BuildReport::default();
    let found = extract_instances_for(
        &schema,
        &[(class.clone(), property.clone())],
        &pyramid.chunks,
        gateway,
        &config.domain,
        config.llm.max_in_flight,
        &mut scratch,
    )?;
    pyramid.schema = schema;
    let mut added = 0;
    for inst in found {
        pyramid.insert_instance(inst)?;
        added += 1;
    }
    Ok(added)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl PriorityStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(Self {
            min: sorted[0],
            max: sorted[n - 1],
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub phrase: String,
    pub source_refs: Vec<String>,
    pub priority: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub ontology_points: usize,
    pub kg_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub priority: Option<PriorityStats>,
    pub selected: usize,
    pub clusters: Vec<ClusterSummary>,
    pub proposals: Vec<SchemaProposal>,
    pub notes: Vec<ProposalNote>,
    pub accepted: usize,
    pub instances_added: usize,
    /// Point-to-priority map for external plotting.
    pub scores: Vec<ScoreEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub iterations: Vec<IterationReport>,
    /// Proposals left for manual review.
    pub pending: Vec<SchemaProposal>,
}

impl CompletionReport {
    pub fn accepted(&self) -> usize {
        self.iterations.iter().map(|i| i.accepted).sum()
    }
}

/// Iterates rank, cluster, propose and apply until `max_iterations` or an
/// iteration accepts nothing.
pub fn run_completion(
    pyramid: &mut KnowledgePyramid,
    config: &PipelineConfig,
    gateway: &LlmGateway,
    embedder: &dyn Embedder,
) -> Result<CompletionReport> {
    let mut report = CompletionReport::default();
    let selection = Selection::from_config(config);
    let mut fitted: Option<LayerModels> = None;
    for iteration in 1..=config.completion.max_iterations {
        let o_points = embed_phrases(ontology_phrases(&pyramid.schema), embedder)?;
        let k_points = embed_phrases(kg_phrases(&pyramid.kg), embedder)?;
        let mut it = IterationReport {
            iteration,
            ontology_points: o_points.len(),
            kg_points: k_points.len(),
            skipped: None,
            priority: None,
            selected: 0,
            clusters: Vec::new(),
            proposals: Vec::new(),
            notes: Vec::new(),
            accepted: 0,
            instances_added: 0,
            scores: Vec::new(),
        };
        if fitted.is_none() || config.completion.refit_each_iteration {
            match fit_layers(&o_points, &k_points, config.gaussian.ridge, config.gaussian.max_dim) {
                Ok(m) => fitted = Some(m),
                Err(e @ (Error::InvalidInput(_) | Error::Numeric(_))) => {
                    it.skipped = Some(e.to_string());
                    report.iterations.push(it);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let models = fitted.as_ref().expect("models fitted above");
        let mut candidates = score_candidates(models, &k_points, selection)?;
        let priorities: Vec<f64> = candidates.iter().map(|c| c.priority).collect();
        it.priority = PriorityStats::of(&priorities);

        let vector_of: HashMap<&str, &PhrasePoint> =
            k_points.iter().map(|p| (p.phrase.text.as_str(), p)).collect();
        let selected: Vec<usize> = (0..candidates.len())
            .filter(|&i| candidates[i].selected)
            .collect();
        it.selected = selected.len();
        let mut clusters: Vec<(PhrasePoint, Vec<PhrasePoint>)> = Vec::new();
        if !selected.is_empty() {
            let points: Vec<PhrasePoint> = selected
                .iter()
                .map(|&i| (*vector_of[candidates[i].phrase.text.as_str()]).clone())
                .collect();
            let vectors: Vec<Vector> = points.iter().map(|p| p.vector.clone()).collect();
            let k = config
                .completion
                .clusters
                .unwrap_or_else(|| default_cluster_count(points.len()))
                .min(points.len());
            let clustering = k_medoids(&vectors, k, config.seed)?;
            for (cluster, &m) in clustering.medoids.iter().enumerate() {
                let members: Vec<PhrasePoint> = clustering
                    .members(cluster)
                    .into_iter()
                    .map(|i| points[i].clone())
                    .collect();
                it.clusters.push(ClusterSummary {
                    medoid_phrase: points[m].phrase.text.clone(),
                    phrases: members.iter().map(|p| p.phrase.text.clone()).collect(),
                });
                clusters.push((points[m].clone(), members));
            }
            for (slot, &i) in selected.iter().enumerate() {
                candidates[i].cluster_id = Some(clustering.assignment[slot]);
            }
        }
        it.scores = candidates
            .iter()
            .map(|c| ScoreEntry {
                phrase: c.phrase.text.clone(),
                source_refs: c.phrase.source_refs.clone(),
                priority: c.priority,
                selected: c.selected,
            })
            .collect();

        let (mut proposals, notes) =
            propose_schema_updates(&clusters, &pyramid.schema, gateway, &config.domain)?;
        it.notes = notes;
        for proposal in &mut proposals {
            if config.completion.auto_accept {
                proposal.status = ProposalStatus::Accepted;
                it.instances_added += apply_proposal(pyramid, proposal, gateway, config)?;
                it.accepted += 1;
            } else {
                report.pending.push(proposal.clone());
            }
        }
        it.proposals = proposals;
        let accepted = it.accepted;
        report.iterations.push(it);
        if accepted == 0 {
            break;
        }
    }
    Ok(report)
}

/// Distinct triplet ids referenced by a set of proposals.
pub fn supporting_ids(proposals: &[SchemaProposal]) -> BTreeSet<String> {
    proposals
        .iter()
        .flat_map(|p| p.supporting_triplets.iter().cloned())
        .collect()
}
