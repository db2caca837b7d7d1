use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pyramid_core::eval::load_dataset;
use pyramid_core::interaction::{ProposalStatus, SchemaProposal};
use pyramid_core::model::{load_corpus, load_pyramid, read_manifest, save_pyramid, load_schema};
use pyramid_core::{BuildOptions, ErrorClass, KnowledgePyramid, Pipeline, PipelineConfig};
use serde::Serialize;

mod serve;

const BUILD_REPORT: &str = "build_report.json";
const COMPLETION_REPORT: &str = "completion_report.json";
const COMPLETION_LOG: &str = "completion_log.jsonl";
const SCORE_MAP: &str = "scores.jsonl";
const PROPOSALS: &str = "proposals.json";
const CONDENSATION_REPORT: &str = "condensation_report.json";
const CONDENSATION_LOG: &str = "condensation_log.jsonl";
const EVAL_REPORT: &str = "eval_report.json";

#[derive(Parser)]
#[command(name = "pyramid", version, about = "Build, refine and query a layered knowledge base")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the ontology, knowledge-graph and text layers from a corpus.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Build the ontology and text layers only.
        #[arg(long)]
        skip_kg: bool,
    },
    /// Propose ontology additions where the knowledge graph covers more.
    Complete {
        #[arg(long)]
        pyramid: PathBuf,
        /// Accept every proposal without review.
        #[arg(long)]
        auto_accept: bool,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Review proposals left pending by `complete`.
    Proposals {
        #[command(subcommand)]
        action: ProposalAction,
    },
    /// Merge redundant triplets around each ontology attribute.
    Condense {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long)]
        k_neighbors: Option<usize>,
    },
    /// Answer one question.
    Query {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long)]
        question: String,
        /// Print the full answer record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Score a QA dataset.
    Eval {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Report path; defaults to the pyramid directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a flat per-item table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve POST /answer over HTTP.
    Serve {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Print layer counts, schema and the latest report summaries.
    Inspect {
        #[arg(long)]
        pyramid: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProposalAction {
    List {
        #[arg(long)]
        pyramid: PathBuf,
    },
    Accept {
        #[arg(long)]
        pyramid: PathBuf,
        /// Proposal positions as printed by `list`.
        #[arg(long, num_args = 1.., required_unless_present = "all")]
        index: Vec<usize>,
        #[arg(long)]
        all: bool,
    },
    Reject {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long, num_args = 1.., required_unless_present = "all")]
        index: Vec<usize>,
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(pyramid_core::Error),
}

impl From<pyramid_core::Error> for CliError {
    fn from(e: pyramid_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn class(&self) -> ErrorClass {
        match self {
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Core(e) => e.class(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Config => 3,
        ErrorClass::Backend => 4,
        ErrorClass::Integrity => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            eprintln!("error class={} message={:?}", class.as_str(), e.message());
            ExitCode::from(exit_code(class))
        }
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} file {} not found", path.display())))
    }
}

fn require_pyramid(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("pyramid directory {} not found", dir.display())))
    }
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            require_file(path, "config")?;
            PipelineConfig::load(path)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn pipeline(config: PipelineConfig) -> CliResult<Pipeline> {
    config.validate()?;
    Ok(Pipeline::from_config(config)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(pyramid_core::Error::from)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| pyramid_core::Error::io(path, e).into())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, &item).map_err(pyramid_core::Error::from)?;
        bytes.push(b'\n');
    }
    std::fs::write(path, bytes).map_err(|e| pyramid_core::Error::io(path, e).into())
}

fn read_proposals(dir: &Path) -> CliResult<Vec<SchemaProposal>> {
    let path = dir.join(PROPOSALS);
    match std::fs::read(&path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes).map_err(pyramid_core::Error::from)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(pyramid_core::Error::io(&path, e).into()),
    }
}

fn open(dir: &Path) -> CliResult<KnowledgePyramid> {
    require_pyramid(dir)?;
    Ok(load_pyramid(dir)?)
}

fn run(cli: Cli) -> CliResult<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Build {
            corpus,
            schema,
            out,
            skip_kg,
        } => {
            require_file(&corpus, "corpus")?;
            require_file(&schema, "schema")?;
            let p = pipeline(config)?;
            let (pyramid, report) = p.build(
                load_corpus(&corpus)?,
                load_schema(&schema)?,
                BuildOptions { skip_kg },
            )?;
            let manifest = save_pyramid(&pyramid, &out)?;
            write_json(&out.join(BUILD_REPORT), &report)?;
            println!(
                "built {}: {} chunks, {} triplets, {} instances",
                out.display(),
                manifest.counts.chunks,
                manifest.counts.triplets,
                manifest.counts.instances
            );
        }
        Command::Complete {
            pyramid: dir,
            auto_accept,
            max_iterations,
        } => {
            let mut config = config;
            config.completion.auto_accept |= auto_accept;
            if let Some(n) = max_iterations {
                config.completion.max_iterations = n;
            }
            let mut pyramid = open(&dir)?;
            let p = pipeline(config)?;
            let report = p.complete(&mut pyramid)?;
            save_pyramid(&pyramid, &dir)?;
            write_json(&dir.join(COMPLETION_REPORT), &report)?;
            write_jsonl(
                &dir.join(COMPLETION_LOG),
                report.iterations.iter().map(|it| {
                    serde_json::json!({
                        "iteration": it.iteration,
                        "selected": it.selected,
                        "priority": it.priority,
                        "clusters": it.clusters,
                        "proposals": it.proposals,
                        "accepted": it.accepted,
                    })
                }),
            )?;
            write_jsonl(
                &dir.join(SCORE_MAP),
                report.iterations.iter().flat_map(|it| {
                    it.scores.iter().map(move |s| {
                        serde_json::json!({
                            "iteration": it.iteration,
                            "phrase": s.phrase,
                            "source_refs": s.source_refs,
                            "priority": s.priority,
                            "selected": s.selected,
                        })
                    })
                }),
            )?;
            write_json(&dir.join(PROPOSALS), &report.pending)?;
            println!(
                "{} iteration(s), {} accepted, {} pending",
                report.iterations.len(),
                report.accepted(),
                report.pending.len()
            );
        }
        Command::Proposals { action } => proposals(config, action)?,
        Command::Condense {
            pyramid: dir,
            k_neighbors,
        } => {
            let mut config = config;
            if let Some(k) = k_neighbors {
                config.condensation.k_neighbors = k;
            }
            let mut pyramid = open(&dir)?;
            let p = pipeline(config)?;
            let report = p.condense(&mut pyramid)?;
            save_pyramid(&pyramid, &dir)?;
            write_json(&dir.join(CONDENSATION_REPORT), &report)?;
            write_jsonl(&dir.join(CONDENSATION_LOG), &report.records)?;
            println!(
                "condensed {} -> {} triplets, {} tokens saved",
                report.kg_before,
                report.kg_after,
                report.token_delta()
            );
        }
        Command::Query {
            pyramid: dir,
            question,
            json,
        } => {
            if question.trim().is_empty() {
                return Err(CliError::Usage("--question is empty".into()));
            }
            let pyramid = open(&dir)?;
            let p = pipeline(config)?;
            let answered = p.answer(&pyramid, &question)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&answered).map_err(pyramid_core::Error::from)?
                );
            } else {
                println!("answer: {}", answered.answer);
                println!("resolved_layer: {}", answered.resolved_layer.as_str());
                println!("evidence:");
                for line in answered.evidence.lines() {
                    println!("  - {line}");
                }
            }
        }
        Command::Eval {
            pyramid: dir,
            dataset,
            out,
            csv,
        } => {
            require_file(&dataset, "dataset")?;
            let pyramid = open(&dir)?;
            let items = load_dataset(&dataset)?;
            let p = pipeline(config)?;
            let report = p.evaluate(&pyramid, &items);
            let out = out.unwrap_or_else(|| dir.join(EVAL_REPORT));
            write_json(&out, &report)?;
            if let Some(csv) = csv {
                std::fs::write(&csv, report.to_csv()?)
                    .map_err(|e| pyramid_core::Error::io(&csv, e))?;
            }
            let routing = &report.routing.counts;
            println!(
                "{} items, {} failed; Ontology {}, KG {}, RawText {}",
                report.items,
                report.failed,
                routing.get("Ontology").unwrap_or(&0),
                routing.get("KG").unwrap_or(&0),
                routing.get("RawText").unwrap_or(&0)
            );
        }
        Command::Serve { pyramid: dir, addr } => {
            let pyramid = open(&dir)?;
            let p = pipeline(config)?;
            serve::run(p, pyramid, &addr).map_err(CliError::Usage)?;
        }
        Command::Inspect { pyramid: dir } => inspect(&dir)?,
    }
    Ok(())
}

fn select(total: usize, index: &[usize], all: bool) -> CliResult<Vec<usize>> {
    if all {
        return Ok((0..total).collect());
    }
    if let Some(i) = index.iter().find(|&&i| i >= total) {
        return Err(CliError::Usage(format!("no proposal at index {i} ({total} listed)")));
    }
    Ok(index.to_vec())
}

fn proposals(config: PipelineConfig, action: ProposalAction) -> CliResult<()> {
    let (dir, accept, index, all) = match action {
        ProposalAction::List { pyramid } => {
            require_pyramid(&pyramid)?;
            for (i, p) in read_proposals(&pyramid)?.iter().enumerate() {
                println!(
                    "{i}\t{:?}\t{}.{}\t{} supporting\t{}",
                    p.status,
                    p.proposed_class,
                    p.proposed_property,
                    p.supporting_triplets.len(),
                    p.medoid_phrase
                );
            }
            return Ok(());
        }
        ProposalAction::Accept { pyramid, index, all } => (pyramid, true, index, all),
        ProposalAction::Reject { pyramid, index, all } => (pyramid, false, index, all),
    };
    let mut pyramid = open(&dir)?;
    let mut list = read_proposals(&dir)?;
    let chosen = select(list.len(), &index, all)?;
    let p = pipeline(config)?;
    let mut added = 0;
    for i in chosen {
        if all && list[i].status != ProposalStatus::Pending {
            continue;
        }
        added += p.resolve_proposal(&mut pyramid, &mut list[i], accept)?;
    }
    save_pyramid(&pyramid, &dir)?;
    write_json(&dir.join(PROPOSALS), &list)?;
    println!("{added} instance(s) added");
    Ok(())
}

fn inspect(dir: &Path) -> CliResult<()> {
    require_pyramid(dir)?;
    let manifest = read_manifest(dir)?;
    let pyramid = load_pyramid(dir)?;
    let c = &manifest.counts;
    println!(
        "layers: {} chunks, {} triplets, {} instances, {} vectors",
        c.chunks, c.triplets, c.instances, c.vectors
    );
    let meta = &pyramid.build_meta;
    println!(
        "providers: chat={} embedding={} dim={}",
        meta.chat_provider, meta.embedding_provider, meta.embedding_dim
    );
    let stages: Vec<&str> = meta.stages.iter().map(|s| s.stage.as_str()).collect();
    println!("stages: {}", stages.join(" "));
    println!("namespace: {}", pyramid.schema.namespace);
    println!("classes: {}", pyramid.schema.classes.join(", "));
    for ((class, property), n) in pyramid.instances_by_pair() {
        println!("  {class}.{property}: {n} instance(s)");
    }
    let report_path = dir.join(EVAL_REPORT);
    if let Ok(bytes) = std::fs::read(&report_path) {
        let report: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(pyramid_core::Error::from)?;
        println!("routing (last eval):");
        if let Some(props) = report["routing"]["proportions"].as_object() {
            for (layer, share) in props {
                println!(
                    "  {layer}: {} ({:.1}%)",
                    report["routing"]["counts"][layer],
                    share.as_f64().unwrap_or(0.0) * 100.0
                );
            }
        }
        println!("  failed: {}", report["failed"]);
    }
    let pending = read_proposals(dir)?
        .iter()
        .filter(|p| p.status == ProposalStatus::Pending)
        .count();
    if pending > 0 {
        println!("pending proposals: {pending}");
    }
    Ok(())
}
