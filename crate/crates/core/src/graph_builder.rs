//! Per-conversation concept graphs.
//!
//! Hop sets are shortest-path classes around the zero-hop seeds, with KG
//! edges traversed in both directions: V¹ holds concepts at distance 1 and
//! V² concepts at distance 2. The central graph is V⁰ ∪ V¹ with every KG
//! edge between its members; the outer graph keeps, for each V¹ concept,
//! the edges that leave it towards V².

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::knowledge::{ConversationExample, ConceptId, Direction, KnowledgeGraph, RelationId, Triple};

/// One edge from a one-hop head to a two-hop tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Flow {
    pub relation: RelationId,
    pub tail: ConceptId,
    /// Direction of the underlying triple as seen from the head.
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeadFlows {
    pub head: ConceptId,
    pub flows: Vec<Flow>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConceptGraph {
    pub zero_hop: Vec<ConceptId>,
    pub one_hop: Vec<ConceptId>,
    pub two_hop: Vec<ConceptId>,
    pub central_edges: Vec<Triple>,
    /// Heads in ascending id order; only heads with at least one flow appear.
    pub outer_flows: Vec<HeadFlows>,
}

impl ConceptGraph {
    /// V⁰ followed by V¹, each in ascending id order.
    pub fn central_concepts(&self) -> Vec<ConceptId> {
        self.zero_hop.iter().chain(&self.one_hop).copied().collect()
    }

    pub fn num_flows(&self) -> usize {
        self.outer_flows.iter().map(|h| h.flows.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.zero_hop.is_empty()
    }

    pub fn is_central(&self, c: ConceptId) -> bool {
        self.zero_hop.binary_search(&c).is_ok() || self.one_hop.binary_search(&c).is_ok()
    }

    pub fn is_two_hop(&self, c: ConceptId) -> bool {
        self.two_hop.binary_search(&c).is_ok()
    }
}

fn check_ids(ids: &[ConceptId], kg: &KnowledgeGraph) -> Result<()> {
    match ids.iter().find(|c| !kg.contains(**c)) {
        Some(c) => Err(Error::Domain(format!("unknown concept id {}", c.0))),
        None => Ok(()),
    }
}

pub fn build_concept_graph(zero_hop: &[ConceptId], kg: &KnowledgeGraph) -> Result<ConceptGraph> {
    check_ids(zero_hop, kg)?;
    let v0: BTreeSet<ConceptId> = zero_hop.iter().copied().collect();
    let v1: BTreeSet<ConceptId> = v0
        .iter()
        .flat_map(|&c| kg.neighbor_concepts(c))
        .filter(|c| !v0.contains(c))
        .collect();
    let v2: BTreeSet<ConceptId> = v1
        .iter()
        .flat_map(|&c| kg.neighbor_concepts(c))
        .filter(|c| !v0.contains(c) && !v1.contains(c))
        .collect();

    let mut central_edges = Vec::new();
    for &c in v0.iter().chain(&v1) {
        for n in kg.neighbors(c) {
            if n.direction == Direction::Forward
                && n.concept != c
                && (v0.contains(&n.concept) || v1.contains(&n.concept))
            {
                central_edges.push(Triple {
                    head: c,
                    relation: n.relation,
                    tail: n.concept,
                });
            }
        }
    }

    let outer_flows = v1
        .iter()
        .filter_map(|&head| {
            let flows: Vec<Flow> = kg
                .neighbors(head)
                .iter()
                .filter(|n| v2.contains(&n.concept))
                .map(|n| Flow {
                    relation: n.relation,
                    tail: n.concept,
                    direction: n.direction,
                })
                .collect();
            (!flows.is_empty()).then_some(HeadFlows { head, flows })
        })
        .collect();

    Ok(ConceptGraph {
        zero_hop: v0.into_iter().collect(),
        one_hop: v1.into_iter().collect(),
        two_hop: v2.into_iter().collect(),
        central_edges,
        outer_flows,
    })
}

/// Restricts V² to `keep`, dropping flows whose tail is no longer present.
pub fn prune_two_hop(graph: &ConceptGraph, keep: &[ConceptId]) -> Result<ConceptGraph> {
    if let Some(c) = keep.iter().find(|c| !graph.is_two_hop(**c)) {
        return Err(Error::Domain(format!("concept {} is not a two-hop concept", c.0)));
    }
    let keep: BTreeSet<ConceptId> = keep.iter().copied().collect();
    let outer_flows = graph
        .outer_flows
        .iter()
        .filter_map(|h| {
            let flows: Vec<Flow> = h.flows.iter().filter(|f| keep.contains(&f.tail)).copied().collect();
            (!flows.is_empty()).then_some(HeadFlows { head: h.head, flows })
        })
        .collect();
    Ok(ConceptGraph {
        two_hop: keep.into_iter().collect(),
        outer_flows,
        ..graph.clone()
    })
}

/// Undirected shortest-path distance from the seed set, up to `max_depth`.
/// Concepts beyond `max_depth` are absent from the result.
pub fn hop_distances(
    seeds: &[ConceptId],
    kg: &KnowledgeGraph,
    max_depth: usize,
) -> Vec<(ConceptId, usize)> {
    let mut seen: HashSet<ConceptId> = HashSet::new();
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for &s in seeds {
        if seen.insert(s) {
            queue.push_back((s, 0));
        }
    }
    while let Some((c, d)) = queue.pop_front() {
        out.push((c, d));
        if d == max_depth {
            continue;
        }
        for n in kg.neighbor_concepts(c) {
            if seen.insert(n) {
                queue.push_back((n, d + 1));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopRow {
    pub depth: usize,
    /// Mean number of concepts within `depth` hops.
    pub amount: f64,
    /// Mean fraction of golden concepts within `depth` hops, over examples
    /// that have golden concepts.
    pub ratio: f64,
    /// Mean number of golden concepts within `depth` hops.
    pub number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopStats {
    pub examples: usize,
    pub rows: Vec<HopRow>,
}

impl HopStats {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>10}", "depth", "amount", "ratio", "number");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>10.3} {:>9.2}% {:>10.3}",
                r.depth,
                r.amount,
                100.0 * r.ratio,
                r.number
            );
        }
        s
    }
}

/// Golden-concept coverage of the ℓ-hop closure around each example's seeds.
pub fn hop_statistics(examples: &[ConversationExample], kg: &KnowledgeGraph, max_depth: usize) -> HopStats {
    let mut amount = vec![0.0; max_depth + 1];
    let mut ratio = vec![0.0; max_depth + 1];
    let mut number = vec![0.0; max_depth + 1];
    let mut with_golden = 0usize;
    for ex in examples {
        let dist = hop_distances(&ex.zero_hop, kg, max_depth);
        let golden: HashSet<ConceptId> = ex.golden.iter().copied().collect();
        for depth in 0..=max_depth {
            let inside = dist.iter().filter(|(_, d)| *d <= depth);
            let (mut size, mut hit) = (0usize, 0usize);
            for (c, _) in inside {
                size += 1;
                hit += golden.contains(c) as usize;
            }
            amount[depth] += size as f64;
            number[depth] += hit as f64;
            if !golden.is_empty() {
                ratio[depth] += hit as f64 / golden.len() as f64;
            }
        }
        with_golden += (!golden.is_empty()) as usize;
    }
    let n = examples.len().max(1) as f64;
    let g = with_golden.max(1) as f64;
    HopStats {
        examples: examples.len(),
        rows: (0..=max_depth)
            .map(|depth| HopRow {
                depth,
                amount: amount[depth] / n,
                ratio: ratio[depth] / g,
                number: number[depth] / n,
            })
            .collect(),
    }
}
