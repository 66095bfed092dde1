//! Two-hop pruning driven by a smaller select-stage model.
//!
//! The select model is trained on a fraction of the corpus. Its teacher-forced
//! decoder states then score every two-hop candidate by summed attention, and
//! only the top `K` candidates per example are kept for the main model.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{softmax, Adam, Tape};
use crate::error::{Error, Result};
use crate::graph_builder::ConceptGraph;
use crate::knowledge::{ConceptId, KnowledgeGraph};
use crate::model::ConceptFlow;
use crate::training::{train, TrainConfig, TrainingExample};

/// Summed attention `α_n` per candidate over `steps` decoder states.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionScore {
    pub candidates: Vec<ConceptId>,
    pub scores: Vec<f64>,
    pub steps: usize,
}

/// Sums, over the query vectors, the softmax across candidates of
/// `query · embedding`.
pub fn score_two_hop(
    queries: &[Vec<f64>],
    candidates: &[ConceptId],
    embeddings: &[Vec<f64>],
) -> Result<SelectionScore> {
    if candidates.is_empty() {
        return Err(Error::Domain("no two-hop candidates to score".into()));
    }
    if queries.is_empty() {
        return Err(Error::Domain("no decoder states to score with".into()));
    }
    if candidates.len() != embeddings.len() {
        return Err(Error::Dimension(format!(
            "{} candidates with {} embeddings",
            candidates.len(),
            embeddings.len()
        )));
    }
    let mut scores = vec![0.0; candidates.len()];
    for q in queries {
        let logits = embeddings
            .iter()
            .map(|e| {
                if e.len() != q.len() {
                    return Err(Error::Dimension(format!(
                        "query of {} values against embedding of {}",
                        q.len(),
                        e.len()
                    )));
                }
                Ok(e.iter().zip(q).map(|(a, b)| a * b).sum())
            })
            .collect::<Result<Vec<f64>>>()?;
        for (s, p) in scores.iter_mut().zip(softmax(&logits)?) {
            *s += p;
        }
    }
    Ok(SelectionScore {
        candidates: candidates.to_vec(),
        scores,
        steps: queries.len(),
    })
}

/// The `k` highest-scoring candidates, best first; equal scores rank the
/// smaller concept id first.
pub fn select_top_k(score: &SelectionScore, k: usize) -> Vec<ConceptId> {
    let mut idx: Vec<usize> = (0..score.candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        score.scores[b]
            .total_cmp(&score.scores[a])
            .then(score.candidates[a].cmp(&score.candidates[b]))
    });
    idx.into_iter().take(k).map(|i| score.candidates[i]).collect()
}

impl ConceptFlow {
    /// Teacher-forced decoder states over the response tokens, mapped into
    /// embedding space.
    pub fn selection_queries(&self, example: &TrainingExample) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let encoded = self.encode(&mut tape, &example.prepared.post, &example.graph)?;
        let ctx = self.decoder_context(&mut tape, &encoded, &example.graph);
        let targets = &example.prepared.targets;
        let response = &targets[..targets.len() - 1];
        let steps = self.teacher_force(&mut tape, &ctx, response)?;
        let queries = steps
            .iter()
            .map(|s| {
                let q = self.query(&mut tape, s.state);
                tape.data(q).to_vec()
            })
            .collect();
        tape.check()?;
        Ok(queries)
    }

    /// `α_n` for every two-hop concept of the example's graph.
    pub fn score_example(&self, example: &TrainingExample) -> Result<SelectionScore> {
        let table = self.concept_embeddings();
        let embeddings: Vec<Vec<f64>> = example.graph.two_hop.iter().map(|c| table.row(c.0).to_vec()).collect();
        score_two_hop(&self.selection_queries(example)?, &example.graph.two_hop, &embeddings)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectConfig {
    /// Share of the corpus used to train the select model, in `(0, 1]`.
    pub fraction: f64,
    pub k: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            k: 10,
            seed: 11,
            train: TrainConfig::default(),
        }
    }
}

/// Seeded sample of `ceil(fraction · n)` example indices, ascending.
pub fn sample_fraction(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let take = ((fraction * n as f64).ceil() as usize).clamp(usize::from(n > 0), n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(take);
    idx.sort_unstable();
    Ok(idx)
}

/// A select model that has taken at least one optimizer step.
#[derive(Debug, Clone)]
pub struct Selector {
    model: ConceptFlow,
    steps: u64,
}

impl Selector {
    pub fn new(model: ConceptFlow, steps: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Untrained);
        }
        Ok(Self { model, steps })
    }

    pub fn model(&self) -> &ConceptFlow {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Top-`k` two-hop concepts for each example.
    pub fn select(&self, data: &[TrainingExample], k: usize) -> Result<Vec<Vec<ConceptId>>> {
        data.iter()
            .map(|ex| {
                if ex.graph.two_hop.is_empty() {
                    return Ok(Vec::new());
                }
                let score = self.model.score_example(ex)?;
                let mut keep = select_top_k(&score, k);
                keep.sort_unstable();
                Ok(keep)
            })
            .collect()
    }
}

/// Trains `model` on a seeded fraction of `data`.
pub fn train_selector(mut model: ConceptFlow, data: &[TrainingExample], config: &SelectConfig) -> Result<(Selector, Vec<usize>)> {
    let subset = sample_fraction(data.len(), config.fraction, config.seed)?;
    let train_data: Vec<TrainingExample> = subset.iter().map(|&i| data[i].clone()).collect();
    let mut opt = Adam::new(config.train.lr);
    let report = train(&mut model, &mut opt, &train_data, &config.train, |_, _| {})?;
    Ok((Selector::new(model, report.steps)?, subset))
}

/// Trains the select model, then prunes every example to its top `K`.
pub fn run_select_stage(
    model: ConceptFlow,
    data: &[TrainingExample],
    config: &SelectConfig,
) -> Result<(Selector, Vec<Vec<ConceptId>>)> {
    let (selector, _) = train_selector(model, data, config)?;
    let keep = selector.select(data, config.k)?;
    Ok((selector, keep))
}

/// One line of a pruned-graph file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunedRecord {
    pub example: usize,
    pub two_hop: Vec<ConceptId>,
    pub concepts: Vec<String>,
}

pub fn write_pruned(mut out: impl Write, keep: &[Vec<ConceptId>], kg: &KnowledgeGraph) -> std::io::Result<()> {
    for (i, ids) in keep.iter().enumerate() {
        let record = PrunedRecord {
            example: i,
            two_hop: ids.clone(),
            concepts: ids.iter().map(|c| kg.concept_name(*c).to_string()).collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&record).expect("records serialize"))?;
    }
    Ok(())
}

/// Reads a pruned-graph file; records must list examples `0..n` in order.
pub fn read_pruned(reader: impl BufRead) -> Result<Vec<Vec<ConceptId>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PrunedRecord = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if record.example != out.len() {
            return Err(Error::parse(
                i + 1,
                format!("expected example {}, found {}", out.len(), record.example),
            ));
        }
        out.push(record.two_hop);
    }
    Ok(out)
}

/// Share of golden concepts inside V² that survive in `keep`, pooled over
/// the corpus; `None` when no golden concept is a two-hop concept.
pub fn golden_two_hop_coverage(
    graphs: &[ConceptGraph],
    golden: &[Vec<ConceptId>],
    keep: &[Vec<ConceptId>],
) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ((g, gold), kept) in graphs.iter().zip(golden).zip(keep) {
        for c in gold.iter().filter(|c| g.is_two_hop(**c)) {
            total += 1;
            hit += usize::from(kept.contains(c));
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}
