//! Command-line front end.
//!
//! Every command reads a [`RunConfig`] assembled from defaults, an optional
//! `key = value` file and `--set key=value` overrides, in increasing order of
//! precedence. Dedicated flags such as `--checkpoint` are overrides too.

mod checkpoint;
mod config;

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use config::RunConfig;

use crate::error::{Error, Result};
use crate::graph_builder::{build_concept_graph, hop_statistics, prune_two_hop, ConceptGraph};
use crate::knowledge::{
    align_embeddings, link_entities, load_conversations, load_embeddings, load_posts, pretrain_transe,
    ConceptId, ConversationExample, KgEmbeddings, KnowledgeGraph, TranseConfig, WordVocab,
};
use crate::metrics::evaluate;
use crate::model::{ConceptFlow, GenerationResult, Source, StepTrace};
use crate::selection::{read_pruned, run_select_stage, write_pruned, SelectConfig};
use crate::training::{build_examples, mean_loss, perplexity, train};

#[derive(Debug, Parser)]
#[command(name = "conceptflow", version, about = "Concept-graph grounded response generation")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    triples: Option<PathBuf>,
    #[arg(long, global = true)]
    conversations: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pruned: Option<PathBuf>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for generation and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hop-depth size and golden-concept coverage of the corpus.
    Stats,
    /// Trains the select model and writes the pruned-graph file.
    Select,
    /// Trains the main model and writes a checkpoint.
    Train {
        /// Continues from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Generates a response for every post of the input file.
    Generate,
    /// Scores generated responses against the reference conversations.
    Evaluate,
    /// Interactive loop: one post per line, `:trace` toggles traces.
    Chat,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for pair in &self.overrides {
            cfg.apply_override(pair)?;
        }
        let paths = [
            ("triples", &self.triples),
            ("conversations", &self.conversations),
            ("checkpoint", &self.checkpoint),
            ("pruned", &self.pruned),
            ("input", &self.input),
            ("output", &self.output),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                cfg.set(key, &p.to_string_lossy())?;
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` and runs the command, returning the process exit code:
/// 0 success, 1 usage, 2 data, 3 numeric.
pub fn run_with<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, stdin, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Stats => cmd_stats(&cfg, stdout),
        Command::Select => cmd_select(&cfg, stdout),
        Command::Train { resume } => cmd_train(&cfg, *resume, stdout, stderr),
        Command::Generate => cmd_generate(&cfg, stdout),
        Command::Evaluate => cmd_evaluate(&cfg, stdout),
        Command::Chat => cmd_chat(&cfg, stdin, stdout),
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_kg(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    KnowledgeGraph::load(cfg.require(&cfg.triples, "triples")?)
}

fn load_corpus(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<Vec<ConversationExample>> {
    let examples = load_conversations(cfg.require(&cfg.conversations, "conversations")?, kg)?;
    if examples.is_empty() {
        return Err(Error::Domain("conversation corpus is empty".into()));
    }
    Ok(examples)
}

fn corpus_vocab(examples: &[ConversationExample]) -> WordVocab {
    WordVocab::build(examples.iter().flat_map(|e| [e.post.as_slice(), e.response.as_slice()]))
}

/// Loads concept and relation tables when `embeddings` is set (relations
/// from the same path with a `.relations` suffix), otherwise runs TransE.
fn kg_embeddings(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<KgEmbeddings> {
    match &cfg.embeddings {
        Some(path) => {
            let mut rel_path = path.clone().into_os_string();
            rel_path.push(".relations");
            let (names, table) = load_embeddings(path)?;
            let concepts = align_embeddings(kg.concept_names(), &names, &table)?;
            let (names, table) = load_embeddings(PathBuf::from(rel_path))?;
            let relations = align_embeddings(kg.relation_names(), &names, &table)?;
            Ok(KgEmbeddings { concepts, relations })
        }
        None => pretrain_transe(
            kg,
            &TranseConfig {
                dim: cfg.concept_dim,
                epochs: cfg.transe_epochs,
                seed: cfg.seed,
                ..TranseConfig::default()
            },
        ),
    }
}

fn load_model(cfg: &RunConfig) -> Result<ConceptFlow> {
    Checkpoint::load(cfg.require(&cfg.checkpoint, "checkpoint")?)?.into_model(cfg.model_config())
}

fn check_concepts(model: &ConceptFlow, kg: &KnowledgeGraph) -> Result<()> {
    if model.num_concepts() != kg.num_concepts() || model.num_relations() != kg.num_relations() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} concepts and {} relations, triple file has {} and {}",
            model.num_concepts(),
            model.num_relations(),
            kg.num_concepts(),
            kg.num_relations()
        )));
    }
    Ok(())
}

fn load_keep(cfg: &RunConfig) -> Result<Option<Vec<Vec<ConceptId>>>> {
    cfg.pruned
        .as_deref()
        .map(|path| {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_pruned(std::io::BufReader::new(file))
        })
        .transpose()
}

fn cmd_stats(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let kg = load_kg(cfg)?;
    let examples = load_corpus(cfg, &kg)?;
    let stats = hop_statistics(&examples, &kg, cfg.max_depth);
    write!(stdout, "{}", stats.to_table()).map_err(out_err)?;
    if let Some(path) = &cfg.output {
        let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_select(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let out_path = cfg.require(&cfg.pruned, "pruned")?;
    let kg = load_kg(cfg)?;
    let examples = load_corpus(cfg, &kg)?;
    let model = ConceptFlow::new(cfg.select_model_config(), corpus_vocab(&examples), &kg_embeddings(cfg, &kg)?, cfg.seed)?;
    let data = build_examples(&model, &kg, &examples, None)?;
    let select = SelectConfig {
        fraction: cfg.select_fraction,
        k: cfg.k,
        seed: cfg.seed,
        train: crate::training::TrainConfig {
            epochs: cfg.select_epochs,
            ..cfg.train_config()
        },
    };
    let (selector, keep) = run_select_stage(model, &data, &select)?;
    let mut buf = Vec::new();
    write_pruned(&mut buf, &keep, &kg).map_err(|e| Error::io(out_path, e))?;
    write_file(out_path, &buf)?;
    let before: usize = data.iter().map(|d| d.graph.two_hop.len()).sum();
    let after: usize = keep.iter().map(Vec::len).sum();
    writeln!(
        stdout,
        "select model: {} steps; kept {after} of {before} two-hop concepts over {} examples (K = {})",
        selector.steps(),
        data.len(),
        cfg.k
    )
    .map_err(out_err)
}

fn cmd_train(cfg: &RunConfig, resume: bool, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let ckpt_path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let kg = load_kg(cfg)?;
    let examples = load_corpus(cfg, &kg)?;
    let (mut model, mut optimizer) = if resume {
        let ckpt = Checkpoint::load(ckpt_path)?;
        let optimizer = ckpt.optimizer(cfg.lr);
        let model = ckpt.into_model(cfg.model_config())?;
        check_concepts(&model, &kg)?;
        (model, optimizer)
    } else {
        let model = ConceptFlow::new(cfg.model_config(), corpus_vocab(&examples), &kg_embeddings(cfg, &kg)?, cfg.seed)?;
        (model, crate::diffmath::Adam::new(cfg.lr))
    };
    let keep = load_keep(cfg)?;
    let data = build_examples(&model, &kg, &examples, keep.as_deref())?;
    let fallbacks: usize = data.iter().map(|d| d.prepared.fallbacks).sum();
    if fallbacks > 0 {
        let _ = writeln!(stderr, "{fallbacks} response concepts outside their graph are supervised as words");
    }
    let initial = mean_loss(&model, &data)?;
    let _ = writeln!(stderr, "initial loss {initial:.6}");
    let report = train(&mut model, &mut optimizer, &data, &cfg.train_config(), |epoch, loss| {
        let _ = writeln!(stderr, "epoch {:>4} loss {loss:.6}", epoch + 1);
    })?;
    let final_loss = mean_loss(&model, &data)?;
    Checkpoint::capture(&model, Some(&optimizer)).save(ckpt_path)?;
    writeln!(
        stdout,
        "trained {} epochs ({} steps): loss {initial:.6} -> {final_loss:.6}",
        report.epoch_losses.len(),
        report.steps
    )
    .map_err(out_err)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRecord {
    pub post: String,
    pub response: String,
    pub source_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<serde_json::Value>,
}

#[derive(Serialize)]
struct Trace<'a> {
    steps: Vec<&'a StepTrace>,
    encoder: &'a crate::model::AttentionDump,
}

fn graph_for(kg: &KnowledgeGraph, post: &[String], keep: Option<&[ConceptId]>) -> Result<ConceptGraph> {
    let graph = build_concept_graph(&link_entities(post, kg), kg)?;
    match keep {
        Some(k) => prune_two_hop(&graph, k),
        None => Ok(graph),
    }
}

fn record(post: &[String], out: &GenerationResult, trace: bool) -> GenerateRecord {
    GenerateRecord {
        post: post.join(" "),
        response: out.tokens.join(" "),
        source_tags: out.sources.iter().map(|s| s.tag().to_string()).collect(),
        trace: trace.then(|| {
            serde_json::to_value(Trace {
                steps: out.steps.iter().map(|s| &s.trace).collect(),
                encoder: &out.encoder,
            })
            .expect("traces serialize")
        }),
    }
}

fn generate_all(cfg: &RunConfig, model: &ConceptFlow, kg: &KnowledgeGraph, posts: &[Vec<String>]) -> Result<Vec<GenerateRecord>> {
    let keep = load_keep(cfg)?;
    if let Some(k) = &keep {
        if k.len() != posts.len() {
            return Err(Error::Domain(format!("{} pruned graphs for {} posts", k.len(), posts.len())));
        }
    }
    let mode = cfg.decode_mode()?;
    let one = |i: usize| -> Result<GenerateRecord> {
        let graph = graph_for(kg, &posts[i], keep.as_ref().map(|k| k[i].as_slice()))?;
        let out = model.generate(kg, &posts[i], &graph, mode, cfg.max_len)?;
        Ok(record(&posts[i], &out, cfg.trace))
    };
    if cfg.workers <= 1 {
        return (0..posts.len()).map(one).collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?
        .install(|| (0..posts.len()).into_par_iter().map(one).collect())
}

fn cmd_generate(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let kg = load_kg(cfg)?;
    let model = load_model(cfg)?;
    check_concepts(&model, &kg)?;
    let posts = load_posts(cfg.require(&cfg.input, "input")?)?;
    let records = generate_all(cfg, &model, &kg, &posts)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    match &cfg.output {
        Some(path) => write_file(path, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()).map_err(out_err),
    }
}

fn read_generated(path: &Path) -> Result<Vec<GenerateRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

fn cmd_evaluate(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let kg = load_kg(cfg)?;
    let examples = load_corpus(cfg, &kg)?;
    let generated = read_generated(cfg.require(&cfg.input, "input")?)?;
    if generated.len() != examples.len() {
        return Err(Error::Domain(format!(
            "{} generated responses for {} references",
            generated.len(),
            examples.len()
        )));
    }
    let hyps: Vec<Vec<String>> = generated
        .iter()
        .map(|g| g.response.split_whitespace().map(String::from).collect())
        .collect();
    let refs: Vec<Vec<String>> = examples.iter().map(|e| e.response.clone()).collect();
    let gen_concepts: Vec<Vec<ConceptId>> = hyps.iter().map(|h| link_entities(h, &kg)).collect();
    let gold_concepts: Vec<Vec<ConceptId>> = examples.iter().map(|e| e.golden.clone()).collect();
    let mut report = evaluate(&hyps, &refs, Some((&gen_concepts, &gold_concepts)))?;
    if cfg.checkpoint.is_some() {
        let model = load_model(cfg)?;
        check_concepts(&model, &kg)?;
        let data = build_examples(&model, &kg, &examples, load_keep(cfg)?.as_deref())?;
        report = report.with_perplexity(perplexity(&model, &data, cfg.workers)?);
    }
    write!(stdout, "{}", report.to_table()).map_err(out_err)?;
    if let Some(path) = &cfg.output {
        write_file(path, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn cmd_chat(cfg: &RunConfig, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    let kg = load_kg(cfg)?;
    let model = load_model(cfg)?;
    check_concepts(&model, &kg)?;
    let mode = cfg.decode_mode()?;
    let mut trace = cfg.trace;
    let mut out = BufWriter::new(stdout);
    let mut line = String::new();
    loop {
        line.clear();
        if stdin.read_line(&mut line).map_err(|e| Error::io("<stdin>", e))? == 0 {
            break;
        }
        let text = line.trim();
        match text {
            "" => continue,
            ":quit" | ":q" => break,
            ":trace" => {
                trace = !trace;
                writeln!(out, "trace {}", if trace { "on" } else { "off" }).map_err(out_err)?;
                continue;
            }
            _ => {}
        }
        let post: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
        let graph = graph_for(&kg, &post, None)?;
        let result = model.generate(&kg, &post, &graph, mode, cfg.max_len)?;
        writeln!(out, "{}", result.tokens.join(" ")).map_err(out_err)?;
        if trace {
            for (step, tok) in result.steps.iter().zip(result.tokens.iter().map(Some).chain([None])) {
                let concepts: Vec<String> = match step.source {
                    Source::Word => step.trace.beta.iter().take(3).map(|(c, w)| format!("{c}:{w:.2}")).collect(),
                    _ => step.trace.gamma.iter().take(3).map(|(c, w)| format!("{c}:{w:.2}")).collect(),
                };
                writeln!(
                    out,
                    "  {:<12} {:<8} {}",
                    tok.map_or("<eos>", String::as_str),
                    step.source.tag(),
                    concepts.join(" ")
                )
                .map_err(out_err)?;
            }
        }
        out.flush().map_err(out_err)?;
    }
    Ok(())
}
