use std::collections::HashMap;

use serde::Serialize;

use super::params::ConceptFlow;
use crate::diffmath::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph_builder::ConceptGraph;
use crate::knowledge::{ConceptId, RelationId};

/// Damping of the propagation scores over the central graph.
pub const PAGERANK_LAMBDA: f64 = 0.5;

/// Hidden states `h_1..h_m` of the utterance GRU.
#[derive(Debug, Clone)]
pub struct UtteranceEncoding {
    pub states: Vec<Var>,
}

impl UtteranceEncoding {
    pub fn last(&self) -> Var {
        *self.states.last().expect("utterance encodings are never empty")
    }
}

/// Local view of the central graph: concepts in V⁰-then-V¹ order and, per
/// concept, its `(relation, neighbor index)` entries in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralStructure {
    pub concepts: Vec<ConceptId>,
    pub num_zero_hop: usize,
    pub neighbors: Vec<Vec<(RelationId, usize)>>,
}

impl CentralStructure {
    pub fn new(graph: &ConceptGraph) -> Self {
        let concepts = graph.central_concepts();
        let index: HashMap<ConceptId, usize> = concepts.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let mut neighbors = vec![Vec::new(); concepts.len()];
        for e in &graph.central_edges {
            let (h, t) = (index[&e.head], index[&e.tail]);
            neighbors[h].push((e.relation, t));
            neighbors[t].push((e.relation, h));
        }
        Self {
            concepts,
            num_zero_hop: graph.zero_hop.len(),
            neighbors,
        }
    }
}

/// Propagation scores for layers `0..=layers`.
///
/// Layer 0 is uniform over the zero-hop concepts. Each later layer keeps
/// `1 − λ` of a node's score and receives `λ · score(j) / deg(j)` from each
/// neighbor entry `j`; a node without neighbors keeps its whole score, so
/// every layer sums to one.
pub fn pagerank_schedule(structure: &CentralStructure, layers: usize, lambda: f64) -> Vec<Vec<f64>> {
    let n = structure.concepts.len();
    let z = structure.num_zero_hop;
    let mut score: Vec<f64> = (0..n).map(|i| if i < z { 1.0 / z as f64 } else { 0.0 }).collect();
    let mut out = vec![score.clone()];
    for _ in 0..layers {
        let mut next = vec![0.0; n];
        for (i, nbrs) in structure.neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                next[i] += score[i];
                continue;
            }
            next[i] += (1.0 - lambda) * score[i];
            let share = lambda * score[i] / nbrs.len() as f64;
            for &(_, j) in nbrs {
                next[j] += share;
            }
        }
        score = next;
        out.push(score.clone());
    }
    out
}

/// Output of the graph encoder over V⁰ ∪ V¹.
#[derive(Debug, Clone)]
pub struct CentralEncoding {
    pub structure: CentralStructure,
    /// Final-layer vectors `g_{e_i}`, aligned with `structure.concepts`.
    pub vectors: Vec<Var>,
    /// Utterance states `p^0..p^L`.
    pub utterance_states: Vec<Var>,
    /// Propagation scores per layer `0..=L`.
    pub pagerank: Vec<Vec<f64>>,
    /// Neighbor attention per layer `1..=L`, node, and neighbor entry; empty
    /// for nodes whose neighborhood carries no propagation score.
    pub attention: Vec<Vec<Vec<f64>>>,
}

/// Output of the relation attention over outer flows.
#[derive(Debug, Clone)]
pub struct OuterEncoding {
    /// One-hop heads with at least one flow, ascending.
    pub heads: Vec<ConceptId>,
    /// `f_{e_p}` vectors of length `2·embed`, aligned with `heads`.
    pub vectors: Vec<Var>,
    /// Attention `θ` over each head's flows, in flow order.
    pub theta: Vec<Vec<f64>>,
}

/// Every encoding of one conversation.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub utterance: UtteranceEncoding,
    pub central: Option<CentralEncoding>,
    pub outer: Option<OuterEncoding>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttentionDump {
    pub pagerank: Vec<Vec<f64>>,
    pub neighbor_attention: Vec<Vec<Vec<f64>>>,
    pub theta: Vec<Vec<f64>>,
}

impl Encoded {
    pub fn attention_dump(&self) -> AttentionDump {
        AttentionDump {
            pagerank: self.central.as_ref().map(|c| c.pagerank.clone()).unwrap_or_default(),
            neighbor_attention: self.central.as_ref().map(|c| c.attention.clone()).unwrap_or_default(),
            theta: self.outer.as_ref().map(|o| o.theta.clone()).unwrap_or_default(),
        }
    }
}

impl ConceptFlow {
    /// `h_i = GRU(h_{i−1}, x_i)` from `h_0 = 0`.
    pub fn encode_utterance(&self, tape: &mut Tape, post: &[usize]) -> Result<UtteranceEncoding> {
        if post.is_empty() {
            return Err(Error::Domain("cannot encode an empty post".into()));
        }
        let words = self.p(tape, self.h.word_emb);
        let mut h = tape.vector(vec![0.0; self.config.hidden_dim]);
        let mut states = Vec::with_capacity(post.len());
        for &w in post {
            let x = tape.row(words, w);
            h = self.h.utter_gru.step(tape, &self.store, h, x)?;
            states.push(h);
        }
        Ok(UtteranceEncoding { states })
    }

    /// Graph layers over the central graph, seeded with concept embeddings and
    /// the last utterance state.
    pub fn encode_central(
        &self,
        tape: &mut Tape,
        graph: &ConceptGraph,
        utterance: &UtteranceEncoding,
    ) -> Result<CentralEncoding> {
        if graph.zero_hop.is_empty() {
            return Err(Error::Domain("central encoding needs at least one zero-hop concept".into()));
        }
        let structure = CentralStructure::new(graph);
        let layers = self.config.layers;
        let pagerank = pagerank_schedule(&structure, layers, PAGERANK_LAMBDA);
        let hd = self.config.hidden_dim;

        let concepts = self.p(tape, self.h.concept_emb);
        let relations = self.p(tape, self.h.relation_emb);
        let concept_in = self.h.concept_in.map(|w| self.p(tape, w));
        let mut g: Vec<Var> = structure
            .concepts
            .iter()
            .map(|c| {
                let e = tape.row(concepts, c.0);
                match concept_in {
                    Some(w) => tape.matvec(w, e),
                    None => e,
                }
            })
            .collect();
        let mut p = utterance.last();
        let mut utterance_states = vec![p];
        let mut attention = Vec::with_capacity(layers);

        for (l, layer) in self.h.gnn.iter().enumerate() {
            let score = &pagerank[l];
            let q = self.query(tape, p);
            let mut next = Vec::with_capacity(g.len());
            let mut layer_att = Vec::with_capacity(g.len());
            for (i, nbrs) in structure.neighbors.iter().enumerate() {
                let mass: Vec<f64> = nbrs.iter().map(|&(_, j)| score[j]).collect();
                let agg = if mass.iter().any(|&m| m > 0.0) {
                    let rel_rows: Vec<Var> = nbrs.iter().map(|&(r, _)| tape.row(relations, r.0)).collect();
                    let rel = tape.stack_rows(&rel_rows);
                    let logits = tape.matvec(rel, q);
                    let soft = tape.softmax(logits);
                    let weighted = tape.mul_const(soft, &mass);
                    let alpha = tape.normalize_sum(weighted);
                    layer_att.push(tape.data(alpha).to_vec());
                    let msgs: Vec<Var> = nbrs
                        .iter()
                        .zip(&rel_rows)
                        .map(|(&(_, j), &r)| {
                            let input = tape.concat(&[r, g[j]]);
                            layer.message.forward(tape, &self.store, input)
                        })
                        .collect::<Result<_>>()?;
                    let stacked = tape.stack_rows(&msgs);
                    tape.matvec_t(stacked, alpha)
                } else {
                    layer_att.push(Vec::new());
                    tape.vector(vec![0.0; hd])
                };
                let input = tape.concat(&[g[i], p, agg]);
                next.push(layer.update.forward(tape, &self.store, input)?);
            }
            let zero_hop_sum = tape.sum(&g[..structure.num_zero_hop]);
            p = layer.utter.forward(tape, &self.store, zero_hop_sum)?;
            utterance_states.push(p);
            attention.push(layer_att);
            g = next;
        }

        Ok(CentralEncoding {
            structure,
            vectors: g,
            utterance_states,
            pagerank,
            attention,
        })
    }

    /// `θ = softmax((W_r r)ᵀ tanh(W_h e_p + W_t e_k))` over each head's flows,
    /// and `f_{e_p} = Σ θ [e_p ; e_k]`.
    pub fn encode_outer(&self, tape: &mut Tape, graph: &ConceptGraph) -> Result<OuterEncoding> {
        let concepts = self.p(tape, self.h.concept_emb);
        let relations = self.p(tape, self.h.relation_emb);
        let wr = self.p(tape, self.h.outer_wr);
        let wh = self.p(tape, self.h.outer_wh);
        let wt = self.p(tape, self.h.outer_wt);
        let mut heads = Vec::new();
        let mut vectors = Vec::new();
        let mut theta = Vec::new();
        for hf in &graph.outer_flows {
            let ep = tape.row(concepts, hf.head.0);
            let head_part = tape.matvec(wh, ep);
            let mut scores = Vec::with_capacity(hf.flows.len());
            let mut pairs = Vec::with_capacity(hf.flows.len());
            for f in &hf.flows {
                let ek = tape.row(concepts, f.tail.0);
                let r = tape.row(relations, f.relation.0);
                let rel = tape.matvec(wr, r);
                let tail_part = tape.matvec(wt, ek);
                let sum = tape.add(head_part, tail_part);
                let act = tape.tanh(sum);
                scores.push(tape.dot(rel, act));
                pairs.push(tape.concat(&[ep, ek]));
            }
            let scores = tape.concat(&scores);
            let th = tape.softmax(scores);
            let stacked = tape.stack_rows(&pairs);
            vectors.push(tape.matvec_t(stacked, th));
            theta.push(tape.data(th).to_vec());
            heads.push(hf.head);
        }
        Ok(OuterEncoding { heads, vectors, theta })
    }

    /// Utterance, central and outer encodings. A graph without zero-hop
    /// concepts yields only the utterance encoding.
    pub fn encode(&self, tape: &mut Tape, post: &[usize], graph: &ConceptGraph) -> Result<Encoded> {
        let utterance = self.encode_utterance(tape, post)?;
        let central = if graph.zero_hop.is_empty() {
            None
        } else {
            Some(self.encode_central(tape, graph, &utterance)?)
        };
        let outer = if graph.outer_flows.is_empty() {
            None
        } else {
            Some(self.encode_outer(tape, graph)?)
        };
        Ok(Encoded {
            utterance,
            central,
            outer,
        })
    }
}
