use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Triple {
    pub head: ConceptId,
    pub relation: RelationId,
    pub tail: ConceptId,
}

/// Whether an adjacency entry follows a triple from head to tail or back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighbor {
    pub relation: RelationId,
    pub concept: ConceptId,
    pub direction: Direction,
}

/// Commonsense triples with concept and relation vocabularies.
///
/// Every triple `(h, r, t)` appears twice in the adjacency lists: as a
/// forward entry under `h` and as an inverse entry under `t`.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    concepts: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<Neighbor>>,
}

impl KnowledgeGraph {
    /// Builds a graph from `(head, relation, tail)` names, dropping duplicates.
    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut kg = Self::default();
        let mut seen = HashSet::new();
        for (h, r, t) in triples {
            kg.add_triple(h, r, t, &mut seen);
        }
        kg
    }

    fn add_triple(&mut self, h: &str, r: &str, t: &str, seen: &mut HashSet<Triple>) {
        let head = ConceptId(self.concepts.insert(h));
        let relation = RelationId(self.relations.insert(r));
        let tail = ConceptId(self.concepts.insert(t));
        self.adjacency.resize(self.concepts.len(), Vec::new());
        let triple = Triple {
            head,
            relation,
            tail,
        };
        if !seen.insert(triple) {
            return;
        }
        self.triples.push(triple);
        self.adjacency[head.0].push(Neighbor {
            relation,
            concept: tail,
            direction: Direction::Forward,
        });
        self.adjacency[tail.0].push(Neighbor {
            relation,
            concept: head,
            direction: Direction::Inverse,
        });
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    /// Parses tab-separated `head relation tail` lines; `#` lines are comments.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut kg = Self::default();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::parse(
                    i + 1,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            kg.add_triple(fields[0].trim(), fields[1].trim(), fields[2].trim(), &mut seen);
        }
        if kg.triples.is_empty() {
            return Err(Error::Domain("triple file contains no triples".into()));
        }
        Ok(kg)
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn concept_id(&self, name: &str) -> Option<ConceptId> {
        self.concepts.id(name).map(ConceptId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.id(name).map(RelationId)
    }

    pub fn concept_name(&self, id: ConceptId) -> &str {
        self.concepts.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0)
    }

    pub fn concept_names(&self) -> &[String] {
        self.concepts.items()
    }

    pub fn relation_names(&self) -> &[String] {
        self.relations.items()
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        id.0 < self.concepts.len()
    }

    pub fn neighbors(&self, id: ConceptId) -> &[Neighbor] {
        &self.adjacency[id.0]
    }

    /// Concepts adjacent to `id` in either direction, self-loops excluded.
    pub fn neighbor_concepts(&self, id: ConceptId) -> impl Iterator<Item = ConceptId> + '_ {
        self.adjacency[id.0]
            .iter()
            .map(|n| n.concept)
            .filter(move |&c| c != id)
    }
}
