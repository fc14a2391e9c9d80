//! Command-line driver for the context-graph pipelines.
//!
//! Every command reads one JSON run configuration, writes its outputs into
//! `--out`, and records a `manifest.json` there: the command, its extra
//! arguments, the effective configuration, and a SHA-256 digest of every
//! produced file. `replay` re-runs a recorded manifest and verifies the
//! fresh outputs are byte-identical.

use std::collections::BTreeMap;
use std::error::Error;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use cgr3::config::{BackendKind, RunConfig};
use cgr3::eval::{aggregate, exact_match, filtered_rank, FilterIndex, QueryRank};
use cgr3::graph::{ContextGraph, EntityContext, EntityId, RelationId, Split};
use cgr3::ingest::{attach_entity_contexts, extract_relation_contexts, ContextSource, MappingTable};
use cgr3::kgc::{export_sft_dataset, run_query, KgcQuery};
use cgr3::kge::{EntityRanker, KgeModel, RankQuery};
use cgr3::kgqa::{answer_question, load_qa_dataset};
use cgr3::llm::{ChatBackend, HttpBackend, ScriptedBackend};
use cgr3::textsim::LexicalScorer;

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "cgr3", version, about = "Context-graph completion and question answering")]
struct Cli {
    /// Run configuration file (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (both pipeline and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured LLM backend: `scripted` or `http`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Build a context graph from triple files: attach entity contexts and
    /// extract per-triple supporting sentences, then save a snapshot.
    Ingest,
    /// Train the embedding model on the train split and write a checkpoint.
    /// With `train.epochs = 0` the checkpoint holds the seeded init.
    Train,
    /// Rank all entities for one completion query with the embedding model.
    Rank {
        /// The known entity (native id).
        #[arg(long)]
        known: String,
        /// Relation id; reversed automatically for head queries.
        #[arg(long)]
        relation: String,
        /// `tail` asks (known, r, ?); `head` asks (?, r, known).
        #[arg(long, default_value = "tail")]
        direction: String,
        /// How many entries of the ranking to write.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Run the full completion pipeline over the test split (both
    /// directions) and write per-query candidate sets and final rankings.
    KgcRun,
    /// Run the completion pipeline over the test split and report filtered
    /// MRR, Hits@{1,3,10} and long-tail buckets.
    KgcEval,
    /// Export a plausibility-ordering fine-tuning dataset from the
    /// validation split.
    ExportSft,
    /// Answer every question in the QA dataset; write answers and traces.
    QaRun,
    /// Answer the QA dataset and report the mean exact-match score.
    QaEval,
    /// Re-run the command recorded in a manifest and verify every output
    /// file is byte-identical.
    Replay {
        /// Path to a previously written manifest.json.
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// What `manifest.json` records about a run.
#[derive(Serialize, Deserialize)]
struct Manifest {
    command: String,
    args: BTreeMap<String, String>,
    config: RunConfig,
    /// Output file name -> SHA-256 of its contents.
    outputs: BTreeMap<String, String>,
}

/// Output directory with a digest ledger for the manifest.
struct OutDir {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl OutDir {
    fn create(dir: &Path) -> CliResult<OutDir> {
        std::fs::create_dir_all(dir)
            .map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a file and records its digest.
    fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, contents)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(contents));
        Ok(())
    }

    /// Records the digest of a file some library call already wrote.
    fn note(&mut self, name: &str) -> CliResult<()> {
        let path = self.path(name);
        let contents = std::fs::read(&path)
            .map_err(|e| format!("cannot read back {}: {e}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(&contents));
        Ok(())
    }

    fn finish(self, command: &Command, config: &RunConfig) -> CliResult<()> {
        let manifest = Manifest {
            command: command_name(command).to_string(),
            args: command_args(command),
            config: config.clone(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest => "ingest",
        Command::Train => "train",
        Command::Rank { .. } => "rank",
        Command::KgcRun => "kgc-run",
        Command::KgcEval => "kgc-eval",
        Command::ExportSft => "export-sft",
        Command::QaRun => "qa-run",
        Command::QaEval => "qa-eval",
        Command::Replay { .. } => "replay",
    }
}

fn command_args(cmd: &Command) -> BTreeMap<String, String> {
    let mut args = BTreeMap::new();
    match cmd {
        Command::Rank {
            known,
            relation,
            direction,
            top,
        } => {
            args.insert("known".into(), known.clone());
            args.insert("relation".into(), relation.clone());
            args.insert("direction".into(), direction.clone());
            args.insert("top".into(), top.to_string());
        }
        Command::Replay { manifest } => {
            args.insert("manifest".into(), manifest.display().to_string());
        }
        _ => {}
    }
    args
}

fn command_from_manifest(name: &str, args: &BTreeMap<String, String>) -> CliResult<Command> {
    let get = |key: &str| -> CliResult<String> {
        args.get(key)
            .cloned()
            .ok_or_else(|| format!("manifest is missing argument `{key}`").into())
    };
    Ok(match name {
        "ingest" => Command::Ingest,
        "train" => Command::Train,
        "rank" => Command::Rank {
            known: get("known")?,
            relation: get("relation")?,
            direction: get("direction")?,
            top: get("top")?.parse()?,
        },
        "kgc-run" => Command::KgcRun,
        "kgc-eval" => Command::KgcEval,
        "export-sft" => Command::ExportSft,
        "qa-run" => Command::QaRun,
        "qa-eval" => Command::QaEval,
        "replay" => return Err("a replay run cannot itself be replayed".into()),
        other => return Err(format!("unknown command `{other}` in manifest").into()),
    })
}

fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(kind) = &cli.backend {
        config.backend.kind = match kind.as_str() {
            "scripted" => BackendKind::Scripted,
            "http" => BackendKind::Http,
            other => return Err(format!("unknown backend `{other}` (scripted | http)").into()),
        };
    }
    config.validate()?;
    Ok(config)
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a PathBuf> {
    path.as_ref()
        .ok_or_else(|| format!("config is missing paths.{key}").into())
}

/// Loads the graph from a snapshot when one is configured, otherwise from
/// the split triple files plus optional saved context files.
fn load_graph(config: &RunConfig) -> CliResult<ContextGraph> {
    if let Some(snapshot) = &config.paths.graph {
        return Ok(ContextGraph::load_snapshot(snapshot)?);
    }
    let mut graph = ContextGraph::new();
    graph.load_triples(require(&config.paths.train, "train (or paths.graph)")?, Split::Train)?;
    if let Some(path) = &config.paths.valid {
        graph.load_triples(path, Split::Valid)?;
    }
    if let Some(path) = &config.paths.test {
        graph.load_triples(path, Split::Test)?;
    }
    graph.freeze();
    if let Some(path) = &config.paths.entity_contexts {
        graph.load_entity_contexts(path)?;
    }
    if let Some(path) = &config.paths.relation_contexts {
        graph.load_relation_contexts(path)?;
    }
    Ok(graph)
}

fn make_backend(config: &RunConfig) -> CliResult<Box<dyn ChatBackend>> {
    match config.backend.kind {
        BackendKind::Scripted => {
            let script = require(&config.paths.script, "script")?;
            Ok(Box::new(ScriptedBackend::from_jsonl(script)?))
        }
        BackendKind::Http => {
            let http = config
                .backend
                .http
                .clone()
                .ok_or("backend.kind is \"http\" but backend.http is missing")?;
            Ok(Box::new(HttpBackend::new(http)))
        }
    }
}

/// Lexical scorer over everything textual the graph knows about.
fn make_scorer(graph: &ContextGraph) -> LexicalScorer {
    let mut docs: Vec<String> = Vec::new();
    for e in graph.entities() {
        match graph.entity_context(e) {
            Some(ctx) => {
                docs.push(ctx.label.clone());
                if !ctx.description.is_empty() {
                    docs.push(ctx.description.clone());
                }
                if let Some(p) = &ctx.wiki_paragraph {
                    docs.push(p.clone());
                }
            }
            None => docs.push(graph.label_of(e)),
        }
    }
    LexicalScorer::from_corpus(docs.iter().map(|s| s.as_str()))
}

fn load_model(config: &RunConfig, graph: &ContextGraph) -> CliResult<KgeModel> {
    let path = require(&config.paths.checkpoint, "checkpoint")?;
    Ok(KgeModel::checkpoint_load(path, Some(&graph.vocab_hash()))?)
}

/// Both corruption directions of every test triple, ground truth kept.
fn test_queries(graph: &ContextGraph) -> Vec<KgcQuery> {
    let mut queries = Vec::new();
    for quad in graph.split_quads(Split::Test) {
        queries.push(KgcQuery::tail_missing(
            quad.h.clone(),
            quad.r.clone(),
            Some(quad.t.clone()),
        ));
        queries.push(KgcQuery::head_missing(
            quad.r.clone(),
            quad.t.clone(),
            Some(quad.h.clone()),
        ));
    }
    queries
}

fn cmd_ingest(config: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let mut graph = ContextGraph::new();
    graph.load_triples(require(&config.paths.train, "train")?, Split::Train)?;
    if let Some(path) = &config.paths.valid {
        graph.load_triples(path, Split::Valid)?;
    }
    if let Some(path) = &config.paths.test {
        graph.load_triples(path, Split::Test)?;
    }
    graph.freeze();

    let coverage = match (&config.paths.mapping, &config.paths.context_dump) {
        (Some(mapping), Some(dump)) => {
            let mapping = MappingTable::load(mapping)?;
            attach_entity_contexts(&mut graph, &ContextSource::Dump(dump.clone()), &mapping)?
        }
        _ => {
            // No external source: every entity gets a minimal context so
            // downstream prompts always have a label to show.
            let ids: Vec<EntityId> = graph.entities().cloned().collect();
            for e in &ids {
                graph.set_entity_context(e, EntityContext::minimal(e))?;
            }
            Default::default()
        }
    };

    let scorer = make_scorer(&graph);
    let extracted = extract_relation_contexts(&mut graph, &scorer, config.params.gamma)?;

    graph.save_snapshot(out.path("graph.json"))?;
    out.note("graph.json")?;
    graph.save_entity_contexts(out.path("entity_contexts.jsonl"))?;
    out.note("entity_contexts.jsonl")?;
    graph.save_relation_contexts(out.path("relation_contexts.jsonl"))?;
    out.note("relation_contexts.jsonl")?;

    let report = json!({
        "entities": graph.num_entities(),
        "relations": graph.num_relations(),
        "quads": graph.num_quads(),
        "context_coverage": coverage,
        "relation_contexts_extracted": extracted,
    });
    out.write("ingest_report.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!(
        "ingested {} entities, {} relations, {} quads; {} relation contexts",
        graph.num_entities(),
        graph.num_relations(),
        graph.num_quads(),
        extracted
    );
    Ok(())
}

fn cmd_train(config: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let graph = load_graph(config)?;
    let mut model = KgeModel::init(&graph, config.model, config.train.clone())?;
    let curve = model.train(&graph)?;
    model.checkpoint_save(out.path("model.json"))?;
    out.note("model.json")?;
    out.write("loss_curve.json", serde_json::to_string_pretty(&curve)?.as_bytes())?;
    let last = curve.last().copied();
    println!(
        "trained {:?} for {} epochs (final loss: {})",
        model.kind(),
        curve.len(),
        last.map_or("n/a".to_string(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn cmd_rank(
    config: &RunConfig,
    out: &mut OutDir,
    known: &str,
    relation: &str,
    direction: &str,
    top: usize,
) -> CliResult<()> {
    let graph = load_graph(config)?;
    let model = load_model(config, &graph)?;
    let known = EntityId::new(known)?;
    let relation = RelationId::new(relation)?;
    let query = match direction {
        "tail" => RankQuery::TailMissing {
            h: known,
            r: relation,
        },
        "head" => RankQuery::HeadMissing {
            r: relation,
            t: known,
        },
        other => return Err(format!("unknown direction `{other}` (tail | head)").into()),
    };
    let list = model.rank_all(&query)?;
    let rows: Vec<_> = list
        .entries()
        .iter()
        .take(top)
        .map(|(e, s)| {
            json!({
                "entity": e.as_str(),
                "label": graph.label_of(e),
                "score": s,
            })
        })
        .collect();
    out.write("ranking.json", serde_json::to_string_pretty(&rows)?.as_bytes())?;
    println!("wrote top {} of {} ranked entities", rows.len(), list.len());
    Ok(())
}

fn cmd_kgc(config: &RunConfig, out: &mut OutDir, evaluate: bool) -> CliResult<()> {
    let graph = load_graph(config)?;
    let model = load_model(config, &graph)?;
    let backend = make_backend(config)?;
    let scorer = make_scorer(&graph);
    let params = config.params.kgc();
    let queries = test_queries(&graph);
    if queries.is_empty() {
        return Err("the test split is empty; nothing to run".into());
    }

    let filter = FilterIndex::from_graph(&graph);
    let mut lines = String::new();
    let mut ranks = Vec::new();
    let mut rank_rows = String::new();
    for query in &queries {
        let outcome = run_query(&graph, &model, backend.as_ref(), &scorer, query, params)?;
        let record = json!({
            "known": query.known.as_str(),
            "relation": query.relation.raw(),
            "ground_truth": query.ground_truth.as_ref().map(|e| e.as_str()),
            "proposed": outcome.candidates.a_llm.iter().map(|e| e.as_str()).collect::<Vec<_>>(),
            "final_top": outcome.final_list.top(10).map(|e| e.as_str()).collect::<Vec<_>>(),
        });
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');

        if evaluate {
            let gt = query.ground_truth.as_ref().expect("built with ground truth");
            let rank =
                filtered_rank(&outcome.final_list, &query.known, &query.relation, gt, &filter)?;
            let degree = graph.degree(&query.known);
            ranks.push(QueryRank { rank, degree });
            rank_rows.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                query.known.as_str(),
                query.relation.raw(),
                gt.as_str(),
                rank,
                degree
            ));
        }
    }
    out.write("kgc_results.jsonl", lines.as_bytes())?;

    if evaluate {
        let report = aggregate(&ranks)?;
        out.write("metrics.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
        out.write("ranks.tsv", rank_rows.as_bytes())?;
        println!(
            "{} queries: MRR {:.4}, Hits@1 {:.4}, Hits@3 {:.4}, Hits@10 {:.4}",
            ranks.len(),
            report.mrr,
            report.hits.get(&1).copied().unwrap_or(0.0),
            report.hits.get(&3).copied().unwrap_or(0.0),
            report.hits.get(&10).copied().unwrap_or(0.0),
        );
    } else {
        println!("ran {} completion queries", queries.len());
    }
    Ok(())
}

fn cmd_export_sft(config: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let graph = load_graph(config)?;
    let model = load_model(config, &graph)?;
    let count = export_sft_dataset(
        &graph,
        &model as &dyn EntityRanker,
        config.params.n,
        config.seed,
        out.path("sft.jsonl"),
    )?;
    out.note("sft.jsonl")?;
    println!("exported {count} fine-tuning records");
    Ok(())
}

fn cmd_qa(config: &RunConfig, out: &mut OutDir, evaluate: bool) -> CliResult<()> {
    let graph = load_graph(config)?;
    let backend = make_backend(config)?;
    let scorer = make_scorer(&graph);
    let qa_config = config.params.qa();
    let examples = load_qa_dataset(require(&config.paths.qa_dataset, "qa_dataset")?)?;
    if examples.is_empty() {
        return Err("the QA dataset is empty; nothing to run".into());
    }

    let mut lines = String::new();
    let mut em_sum = 0u64;
    for example in &examples {
        let topics: Vec<EntityId> = example
            .topic_entities
            .iter()
            .filter_map(|raw| EntityId::new(raw.as_str()).ok())
            .collect();
        let (answers, trace, error) = match answer_question(
            &graph,
            backend.as_ref(),
            &scorer,
            &example.question,
            &topics,
            &qa_config,
        ) {
            Ok(outcome) => (outcome.answers, outcome.trace, None),
            Err(e) => {
                log::warn!("question failed: {} ({e})", example.question);
                (Vec::new(), Vec::new(), Some(e.to_string()))
            }
        };
        let em = exact_match(&answers, &example.answers, Some(&graph));
        em_sum += u64::from(em);
        let record = json!({
            "question": example.question,
            "answers": answers,
            "gold": example.answers,
            "exact_match": em,
            "trace": trace,
            "error": error,
        });
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    out.write("qa_results.jsonl", lines.as_bytes())?;

    if evaluate {
        let score = em_sum as f64 / examples.len() as f64;
        let report = json!({
            "questions": examples.len(),
            "exact_match": score,
        });
        out.write("qa_metrics.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
        println!("{} questions: exact match {:.4}", examples.len(), score);
    } else {
        println!("answered {} questions", examples.len());
    }
    Ok(())
}

fn cmd_replay(manifest_path: &Path, out_dir: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| format!("cannot read {}: {e}", manifest_path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| format!("invalid manifest {}: {e}", manifest_path.display()))?;
    let command = command_from_manifest(&manifest.command, &manifest.args)?;

    let mut rerun = OutDir::create(out_dir)?;
    dispatch(&command, &manifest.config, &mut rerun)?;

    let mut mismatches = Vec::new();
    for (name, recorded) in &manifest.outputs {
        match rerun.outputs.get(name) {
            Some(fresh) if fresh == recorded => {}
            Some(_) => mismatches.push(format!("{name}: contents differ")),
            None => mismatches.push(format!("{name}: not produced")),
        }
    }
    for name in rerun.outputs.keys() {
        if !manifest.outputs.contains_key(name) {
            mismatches.push(format!("{name}: not in the original run"));
        }
    }
    rerun.finish(
        &Command::Replay {
            manifest: manifest_path.to_path_buf(),
        },
        &manifest.config,
    )?;
    if mismatches.is_empty() {
        println!(
            "replayed `{}`: all {} outputs byte-identical",
            manifest.command,
            manifest.outputs.len()
        );
        Ok(())
    } else {
        Err(format!("replay of `{}` diverged: {}", manifest.command, mismatches.join("; ")).into())
    }
}

fn dispatch(command: &Command, config: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    match command {
        Command::Ingest => cmd_ingest(config, out),
        Command::Train => cmd_train(config, out),
        Command::Rank {
            known,
            relation,
            direction,
            top,
        } => cmd_rank(config, out, known, relation, direction, *top),
        Command::KgcRun => cmd_kgc(config, out, false),
        Command::KgcEval => cmd_kgc(config, out, true),
        Command::ExportSft => cmd_export_sft(config, out),
        Command::QaRun => cmd_qa(config, out, false),
        Command::QaEval => cmd_qa(config, out, true),
        Command::Replay { .. } => unreachable!("replay is handled before dispatch"),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Replay { manifest } = &cli.command {
        return cmd_replay(manifest, &cli.out);
    }
    let config = effective_config(&cli)?;
    let mut out = OutDir::create(&cli.out)?;
    dispatch(&cli.command, &config, &mut out)?;
    out.finish(&cli.command, &config)
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = e.source();
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(1);
    }
}
