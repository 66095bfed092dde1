//! Translational embeddings: a triple `(h, r, t)` is plausible when
//! `h + r ≈ t`. Trained with a margin ranking loss against corrupted triples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{KnowledgeGraph, Triple};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TranseConfig {
    pub dim: usize,
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 100,
            margin: 1.0,
            lr: 0.01,
            seed: 13,
        }
    }
}

/// Concept (`|C| × d`) and relation (`|R| × d`) embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct KgEmbeddings {
    pub concepts: Tensor,
    pub relations: Tensor,
}

impl KgEmbeddings {
    pub fn dim(&self) -> usize {
        self.concepts.cols()
    }

    /// `‖h + r − t‖₂` for one triple.
    pub fn distance(&self, t: &Triple) -> f64 {
        let h = self.concepts.row(t.head.0);
        let r = self.relations.row(t.relation.0);
        let tl = self.concepts.row(t.tail.0);
        h.iter()
            .zip(r)
            .zip(tl)
            .map(|((h, r), t)| (h + r - t).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean_distance(&self, triples: &[Triple]) -> f64 {
        triples.iter().map(|t| self.distance(t)).sum::<f64>() / triples.len().max(1) as f64
    }

    /// Margin loss `max(0, margin + d(pos) − d(neg))` for one pair.
    pub fn margin_loss(&self, pos: &Triple, neg: &Triple, margin: f64) -> f64 {
        (margin + self.distance(pos) - self.distance(neg)).max(0.0)
    }
}

pub fn pretrain_transe(kg: &KnowledgeGraph, config: &TranseConfig) -> Result<KgEmbeddings> {
    if config.dim == 0 {
        return Err(Error::Domain("embedding dimension must be positive".into()));
    }
    if !(config.margin > 0.0) {
        return Err(Error::Domain("margin must be positive".into()));
    }
    if kg.triples().is_empty() {
        return Err(Error::Domain("cannot embed a graph with no triples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let emb = init(kg, config.dim, &mut rng);
    train(kg, emb, config, &mut rng)
}

/// Uniform ±6/√d initialisation with unit-norm rows.
fn init(kg: &KnowledgeGraph, dim: usize, rng: &mut ChaCha8Rng) -> KgEmbeddings {
    let bound = 6.0 / (dim as f64).sqrt();
    let mut table = |rows: usize| {
        let mut data: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        normalize_rows(&mut data, dim);
        Tensor::from_parts(vec![rows, dim], data)
    };
    let concepts = table(kg.num_concepts());
    let relations = table(kg.num_relations());
    KgEmbeddings {
        concepts,
        relations,
    }
}

fn train(
    kg: &KnowledgeGraph,
    mut emb: KgEmbeddings,
    config: &TranseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<KgEmbeddings> {
    let dim = config.dim;
    let n_concepts = kg.num_concepts();
    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for &i in &order {
            let pos = kg.triples()[i];
            let mut neg = pos;
            if rng.gen_bool(0.5) {
                neg.head.0 = rng.gen_range(0..n_concepts);
            } else {
                neg.tail.0 = rng.gen_range(0..n_concepts);
            }
            if emb.margin_loss(&pos, &neg, config.margin) <= 0.0 {
                continue;
            }
            // d‖x‖/dx = x/‖x‖; positive distance goes down, negative goes up
            let pos_dir = unit_residual(&emb, &pos);
            let neg_dir = unit_residual(&emb, &neg);
            apply(&mut emb, &pos, &pos_dir, -config.lr, dim);
            apply(&mut emb, &neg, &neg_dir, config.lr, dim);
        }
        normalize_rows(emb.concepts.data_mut(), dim);
    }
    if !emb.concepts.is_finite() || !emb.relations.is_finite() {
        return Err(Error::Numeric("embedding training diverged".into()));
    }
    Ok(emb)
}

fn unit_residual(emb: &KgEmbeddings, t: &Triple) -> Vec<f64> {
    let h = emb.concepts.row(t.head.0);
    let r = emb.relations.row(t.relation.0);
    let tl = emb.concepts.row(t.tail.0);
    let diff: Vec<f64> = (0..h.len()).map(|k| h[k] + r[k] - tl[k]).collect();
    let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; diff.len()];
    }
    diff.into_iter().map(|x| x / norm).collect()
}

fn apply(emb: &mut KgEmbeddings, t: &Triple, dir: &[f64], step: f64, dim: usize) {
    let c = emb.concepts.data_mut();
    for k in 0..dim {
        c[t.head.0 * dim + k] += step * dir[k];
        c[t.tail.0 * dim + k] -= step * dir[k];
    }
    let r = emb.relations.data_mut();
    for k in 0..dim {
        r[t.relation.0 * dim + k] += step * dir[k];
    }
}

fn normalize_rows(data: &mut [f64], dim: usize) {
    for row in data.chunks_mut(dim) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
}
