//! Benchmark metrics and runner: choice-set precision/recall/F1, BLEU,
//! embedding similarity, entity hit rate and per-layer routing shares.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::construction::par_map;
use crate::embedding::{cosine, embed, Embedder};
use crate::error::{Error, Result};
use crate::model::KnowledgePyramid;
use crate::query::{answer, AnsweredQuery, Layer, QueryContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaKind {
    Mcq,
    Maq,
    Open,
}

impl QaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QaKind::Mcq => "mcq",
            QaKind::Maq => "maq",
            QaKind::Open => "open",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    pub kind: QaKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<Choice>,
    /// Correct labels for choice questions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold: Vec<String>,
    /// Reference answer for open questions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_entities: Vec<String>,
    /// Layer the item is expected to resolve at, when the dataset pins it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_layer: Option<Layer>,
}

impl QaItem {
    pub fn labels(&self) -> Vec<String> {
        self.choices.iter().map(|c| c.label.clone()).collect()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        match self.kind {
            QaKind::Mcq | QaKind::Maq => {
                if self.choices.is_empty() {
                    return Err("choice question without choices".into());
                }
                let labels: BTreeSet<&str> = self.choices.iter().map(|c| c.label.as_str()).collect();
                if labels.len() != self.choices.len() {
                    return Err("duplicate choice label".into());
                }
                if let Some(g) = self.gold.iter().find(|g| !labels.contains(g.as_str())) {
                    return Err(format!("gold label `{g}` is not a choice"));
                }
                if self.kind == QaKind::Mcq && self.gold.len() != 1 {
                    return Err(format!("mcq needs exactly one gold label, got {}", self.gold.len()));
                }
                if self.kind == QaKind::Maq && self.gold.is_empty() {
                    return Err("maq needs at least one gold label".into());
                }
            }
            QaKind::Open => {
                if self.reference.as_deref().is_none_or(|r| r.trim().is_empty()) {
                    return Err("open question needs a non-empty reference".into());
                }
            }
        }
        Ok(())
    }

    /// Instruction appended to the synthesis prompt.
    pub fn answer_format(&self) -> String {
        match self.kind {
            QaKind::Open => String::new(),
            kind => {
                let mut s = String::from("\nChoices:\n");
                for c in &self.choices {
                    s.push_str(&format!("{}. {}\n", c.label, c.text));
                }
                s.push_str(if kind == QaKind::Mcq {
                    "Reply with the label of the single correct choice."
                } else {
                    "Reply with the labels of all correct choices."
                });
                s
            }
        }
    }
}

pub fn parse_dataset(text: &str, file: &str) -> Result<Vec<QaItem>> {
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            file: file.to_string(),
            line: i + 1,
            message,
        };
        let item: QaItem = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        item.validate().map_err(parse_err)?;
        if !ids.insert(item.id.clone()) {
            return Err(Error::DuplicateId(item.id));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaItem>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// Set precision, recall and F1. An empty prediction scores zero precision.
pub fn score_choices(
    predicted: &BTreeSet<String>,
    gold: &BTreeSet<String>,
    labels: &[String],
) -> Result<(f64, f64, f64)> {
    if let Some(l) = predicted.iter().chain(gold).find(|l| !labels.contains(l)) {
        return Err(Error::InvalidInput(format!("label `{l}` is not one of the choices")));
    }
    let hits = predicted.intersection(gold).count() as f64;
    let p = if predicted.is_empty() { 0.0 } else { hits / predicted.len() as f64 };
    let r = if gold.is_empty() { 0.0 } else { hits / gold.len() as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((p, r, f1))
}

/// Choice labels mentioned in a free-form reply: standalone label tokens
/// such as `B`, `(B)`, `B.` or `B)`. Lower-case letters are not read as labels.
pub fn extract_labels(reply: &str, labels: &[String]) -> BTreeSet<String> {
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    let re = TOKEN.get_or_init(|| Regex::new(r"[A-Za-z0-9]+").expect("valid regex"));
    re.find_iter(reply)
        .map(|m| m.as_str())
        .filter(|t| labels.iter().any(|l| l == t))
        .map(str::to_string)
        .collect()
}

fn tokens(text: &str) -> Vec<String> {
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    let re = TOKEN.get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("valid regex"));
    re.find_iter(&text.to_lowercase())
        .map(|m| m.as_str().to_string())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU up to order `n` with brevity penalty.
///
/// Unigram precision is unsmoothed; orders 2 and up add one to both the
/// clipped match count and the candidate n-gram count.
pub fn bleu_n(candidate: &str, reference: &str, n: usize) -> f64 {
    let cand = tokens(candidate);
    let refr = tokens(reference);
    if cand.is_empty() || refr.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let c = ngram_counts(&cand, order);
        let r = ngram_counts(&refr, order);
        let matched: usize = c
            .iter()
            .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        let total = cand.len().saturating_sub(order - 1);
        let p = if order == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let bp = if cand.len() >= refr.len() {
        1.0
    } else {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    };
    (bp * (log_sum / n as f64).exp()).clamp(0.0, 1.0)
}

pub fn embedding_similarity(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64> {
    cosine(&embed(candidate, embedder)?, &embed(reference, embedder)?)
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Share of gold entities found in the response; `None` without gold entities.
pub fn hit_rate(response: &str, gold_entities: &[String]) -> Option<f64> {
    if gold_entities.is_empty() {
        return None;
    }
    let resp = normalize(response);
    let hits = gold_entities
        .iter()
        .filter(|e| resp.contains(&normalize(e)))
        .count();
    Some(hits as f64 / gold_entities.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub kind: QaKind,
    pub answer: Option<String>,
    pub resolved_layer: Option<Layer>,
    pub expected_layer: Option<Layer>,
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<String>>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub bleu2: Option<f64>,
    pub bleu4: Option<f64>,
    pub embedding_similarity: Option<f64>,
    pub hit_rate: Option<f64>,
    /// Calls attributed to layers below the resolving one; should be zero.
    pub lower_layer_calls: usize,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceAggregate {
    pub items: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAggregate {
    pub items: usize,
    pub bleu2: f64,
    pub bleu4: f64,
    pub embedding_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRateAggregate {
    pub items: usize,
    /// Mean of per-item hit rates, in percent.
    pub percent: f64,
    /// Hits over all gold entities pooled across items, in percent.
    pub pooled_percent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub choice: Option<ChoiceAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open: Option<OpenAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_rate: Option<HitRateAggregate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub counts: BTreeMap<String, usize>,
    /// Share of answered items per layer.
    pub proportions: BTreeMap<String, f64>,
    pub failure_fraction: f64,
    /// Items whose resolving layer differs from the dataset's expectation.
    pub unexpected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: usize,
    pub answered: usize,
    pub failed: usize,
    pub aggregates: Aggregates,
    pub routing: Routing,
    /// Item ids that touched a layer below the one that resolved them.
    pub laziness_violations: Vec<String>,
    pub config: serde_json::Value,
    pub metadata: BTreeMap<String, String>,
    pub per_item: Vec<ItemResult>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn score_item(item: &QaItem, outcome: Result<AnsweredQuery>, embedder: &dyn Embedder) -> ItemResult {
    let mut r = ItemResult {
        id: item.id.clone(),
        kind: item.kind,
        answer: None,
        resolved_layer: None,
        expected_layer: item.expected_layer,
        failure: None,
        predicted: None,
        precision: None,
        recall: None,
        f1: None,
        bleu2: None,
        bleu4: None,
        embedding_similarity: None,
        hit_rate: None,
        lower_layer_calls: 0,
        prompt_tokens: 0,
        completion_tokens: 0,
    };
    let aq = match outcome {
        Ok(aq) => aq,
        Err(e) => {
            r.failure = Some(e.to_string());
            return r;
        }
    };
    r.resolved_layer = Some(aq.resolved_layer);
    r.lower_layer_calls = aq.telemetry.calls_below(aq.resolved_layer);
    (r.prompt_tokens, r.completion_tokens) = aq.telemetry.tokens();
    match item.kind {
        QaKind::Mcq | QaKind::Maq => {
            let labels = item.labels();
            let pred = extract_labels(&aq.answer, &labels);
            let gold: BTreeSet<String> = item.gold.iter().cloned().collect();
            match score_choices(&pred, &gold, &labels) {
                Ok((p, rc, f)) => {
                    r.precision = Some(p);
                    r.recall = Some(rc);
                    r.f1 = Some(f);
                }
                Err(e) => r.failure = Some(e.to_string()),
            }
            r.predicted = Some(pred.into_iter().collect());
        }
        QaKind::Open => {
            let reference = item.reference.as_deref().unwrap_or_default();
            r.bleu2 = Some(bleu_n(&aq.answer, reference, 2));
            r.bleu4 = Some(bleu_n(&aq.answer, reference, 4));
            match embedding_similarity(&aq.answer, reference, embedder) {
                Ok(s) => r.embedding_similarity = Some(s),
                Err(e) => r.failure = Some(e.to_string()),
            }
        }
    }
    r.hit_rate = hit_rate(&aq.answer, &item.gold_entities);
    r.answer = Some(aq.answer);
    r
}

/// Answers and scores every item, up to `max_in_flight` at a time.
///
/// Items are sorted by id before aggregation so the report does not depend
/// on dataset order or scheduling.
pub fn run_benchmark(
    items: &[QaItem],
    pyramid: &KnowledgePyramid,
    ctx: &QueryContext<'_>,
    max_in_flight: usize,
    config_snapshot: serde_json::Value,
) -> EvalReport {
    let mut sorted: Vec<&QaItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let per_item: Vec<ItemResult> = par_map(&sorted, max_in_flight, |item| {
        let format = format!("{}{}", ctx.format, item.answer_format());
        let item_ctx = QueryContext {
            gateway: ctx.gateway,
            embedder: ctx.embedder,
            config: ctx.config,
            domain: ctx.domain,
            format: &format,
            record_latency: ctx.record_latency,
        };
        let outcome = answer(&item.question, pyramid, &item_ctx);
        score_item(item, outcome, ctx.embedder)
    });
    summarize(per_item, &sorted, config_snapshot)
}

fn summarize(per_item: Vec<ItemResult>, items: &[&QaItem], config: serde_json::Value) -> EvalReport {
    let ok: Vec<&ItemResult> = per_item.iter().filter(|r| r.failure.is_none()).collect();
    let failed = per_item.len() - ok.len();

    let choice: Vec<&&ItemResult> = ok.iter().filter(|r| r.f1.is_some()).collect();
    let open: Vec<&&ItemResult> = ok.iter().filter(|r| r.bleu2.is_some()).collect();
    let hr: Vec<f64> = ok.iter().filter_map(|r| r.hit_rate).collect();
    let gold_of: HashMap<&str, &QaItem> = items.iter().map(|i| (i.id.as_str(), *i)).collect();
    let (pooled_hits, pooled_total) = ok
        .iter()
        .filter_map(|r| {
            let ents = &gold_of.get(r.id.as_str())?.gold_entities;
            let resp = normalize(r.answer.as_deref()?);
            let hits = ents.iter().filter(|e| resp.contains(&normalize(e))).count();
            Some((hits, ents.len()))
        })
        .fold((0, 0), |(a, b), (h, t)| (a + h, b + t));

    let aggregates = Aggregates {
        choice: (!choice.is_empty()).then(|| ChoiceAggregate {
            items: choice.len(),
            precision: mean(&choice.iter().filter_map(|r| r.precision).collect::<Vec<_>>()),
            recall: mean(&choice.iter().filter_map(|r| r.recall).collect::<Vec<_>>()),
            f1: mean(&choice.iter().filter_map(|r| r.f1).collect::<Vec<_>>()),
        }),
        open: (!open.is_empty()).then(|| OpenAggregate {
            items: open.len(),
            bleu2: mean(&open.iter().filter_map(|r| r.bleu2).collect::<Vec<_>>()),
            bleu4: mean(&open.iter().filter_map(|r| r.bleu4).collect::<Vec<_>>()),
            embedding_similarity: mean(
                &open.iter().filter_map(|r| r.embedding_similarity).collect::<Vec<_>>(),
            ),
        }),
        hit_rate: (!hr.is_empty()).then(|| HitRateAggregate {
            items: hr.len(),
            percent: 100.0 * mean(&hr),
            pooled_percent: if pooled_total > 0 {
                100.0 * pooled_hits as f64 / pooled_total as f64
            } else {
                0.0
            },
        }),
    };

    let answered: Vec<&ItemResult> = per_item.iter().filter(|r| r.resolved_layer.is_some()).collect();
    let mut routing = Routing::default();
    for layer in Layer::ALL {
        let n = answered.iter().filter(|r| r.resolved_layer == Some(layer)).count();
        routing.counts.insert(layer.as_str().to_string(), n);
        let share = if answered.is_empty() { 0.0 } else { n as f64 / answered.len() as f64 };
        routing.proportions.insert(layer.as_str().to_string(), share);
    }
    routing.failure_fraction = if per_item.is_empty() {
        0.0
    } else {
        (per_item.len() - answered.len()) as f64 / per_item.len() as f64
    };
    routing.unexpected = answered
        .iter()
        .filter(|r| r.expected_layer.is_some() && r.expected_layer != r.resolved_layer)
        .map(|r| r.id.clone())
        .collect();

    let laziness_violations = per_item
        .iter()
        .filter(|r| r.lower_layer_calls > 0)
        .map(|r| r.id.clone())
        .collect();
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "hit_rate".to_string(),
        "percent averages per-item hit rates; pooled_percent divides all hits by all gold entities".to_string(),
    );
    metadata.insert(
        "choice_extraction".to_string(),
        "standalone label tokens in the reply; none found scores zero".to_string(),
    );
    metadata.insert(
        "embedding_similarity".to_string(),
        "cosine under the configured embedding provider".to_string(),
    );

    EvalReport {
        items: per_item.len(),
        answered: answered.len(),
        failed,
        aggregates,
        routing,
        laziness_violations,
        config,
        metadata,
        per_item,
    }
}

impl EvalReport {
    /// Flat per-item table.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record([
            "id",
            "kind",
            "resolved_layer",
            "expected_layer",
            "failed",
            "precision",
            "recall",
            "f1",
            "bleu2",
            "bleu4",
            "embedding_similarity",
            "hit_rate",
            "lower_layer_calls",
            "prompt_tokens",
            "completion_tokens",
        ])
        .map_err(csv_err)?;
        let num = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let layer = |l: Option<Layer>| l.map(|l| l.as_str().to_string()).unwrap_or_default();
        for r in &self.per_item {
            w.write_record([
                r.id.clone(),
                r.kind.as_str().to_string(),
                layer(r.resolved_layer),
                layer(r.expected_layer),
                r.failure.is_some().to_string(),
                num(r.precision),
                num(r.recall),
                num(r.f1),
                num(r.bleu2),
                num(r.bleu4),
                num(r.embedding_similarity),
                num(r.hit_rate),
                r.lower_layer_calls.to_string(),
                r.prompt_tokens.to_string(),
                r.completion_tokens.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }
}
