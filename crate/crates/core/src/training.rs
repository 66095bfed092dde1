//! Optimization loop and corpus-level likelihood.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffmath::{Adam, ParamGrads, Tape};
use crate::error::{Error, Result};
use crate::graph_builder::{build_concept_graph, prune_two_hop, ConceptGraph};
use crate::knowledge::{ConceptId, ConversationExample, KnowledgeGraph};
use crate::model::{prepare, ConceptFlow, Prepared};

/// A conversation with its concept graph and supervised targets.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub prepared: Prepared,
    pub graph: ConceptGraph,
}

/// Builds graphs and targets for every example. `keep`, when given, restricts
/// each example's V² to the listed concepts.
pub fn build_examples(
    model: &ConceptFlow,
    kg: &KnowledgeGraph,
    examples: &[ConversationExample],
    keep: Option<&[Vec<ConceptId>]>,
) -> Result<Vec<TrainingExample>> {
    if let Some(keep) = keep {
        if keep.len() != examples.len() {
            return Err(Error::Domain(format!(
                "{} pruned graphs for {} examples",
                keep.len(),
                examples.len()
            )));
        }
    }
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut graph = build_concept_graph(&ex.zero_hop, kg)?;
            if let Some(keep) = keep {
                graph = prune_two_hop(&graph, &keep[i])?;
            }
            let prepared = prepare(&model.words, kg, &ex.post, &ex.response, &graph);
            Ok(TrainingExample { prepared, graph })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient norm limit per update.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 10,
            batch_size: 1,
            clip_norm: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean example loss per epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Loss and parameter gradients of one example.
pub fn example_gradients(model: &ConceptFlow, ex: &TrainingExample) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let loss = model.training_loss(&mut tape, &ex.prepared, &ex.graph)?;
    let grads = tape.backward(loss)?.param_grads(&model.store);
    Ok((tape.scalar(loss), grads))
}

/// Runs `config.epochs` epochs of Adam. The visiting order of each epoch is a
/// seeded shuffle, so equal seeds give bitwise-equal parameters.
pub fn train(
    model: &mut ConceptFlow,
    optimizer: &mut Adam,
    data: &[TrainingExample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Domain("training corpus is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = ParamGrads::zeros_like(&model.store);
            for &i in batch {
                let (loss, g) = example_gradients(model, &data[i])?;
                total += loss;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = config.clip_norm {
                grads.clip_norm(max);
            }
            if !grads.global_norm().is_finite() {
                return Err(Error::Numeric("gradient norm is not finite".into()));
            }
            optimizer.step(&mut model.store, &grads);
        }
        let mean = total / data.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses,
        steps: optimizer.steps(),
    })
}

fn example_loss(model: &ConceptFlow, ex: &TrainingExample) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = model.training_loss(&mut tape, &ex.prepared, &ex.graph)?;
    Ok(tape.scalar(loss))
}

/// Per-example losses, evaluated on `workers` threads when above one. The
/// result does not depend on the worker count.
pub fn example_losses(model: &ConceptFlow, data: &[TrainingExample], workers: usize) -> Result<Vec<f64>> {
    if workers <= 1 {
        return data.iter().map(|ex| example_loss(model, ex)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| data.par_iter().map(|ex| example_loss(model, ex)).collect())
}

/// Mean of the per-example losses.
pub fn mean_loss(model: &ConceptFlow, data: &[TrainingExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("corpus is empty".into()));
    }
    Ok(example_losses(model, data, 1)?.iter().sum::<f64>() / data.len() as f64)
}

/// `exp` of the token-weighted mean negative log-likelihood.
pub fn perplexity(model: &ConceptFlow, data: &[TrainingExample], workers: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("corpus is empty".into()));
    }
    let losses = example_losses(model, data, workers)?;
    let tokens: usize = data.iter().map(|ex| ex.prepared.targets.len()).sum();
    let nll: f64 = losses
        .iter()
        .zip(data)
        .map(|(l, ex)| l * ex.prepared.targets.len() as f64)
        .sum();
    Ok((nll / tokens as f64).exp())
}
