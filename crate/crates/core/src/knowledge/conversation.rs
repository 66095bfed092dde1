use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{ConceptId, KnowledgeGraph};
use super::linking::link_entities;
use crate::error::{Error, Result};

/// A post/response pair grounded in the knowledge graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationExample {
    pub post: Vec<String>,
    pub response: Vec<String>,
    /// Concepts linked from the post.
    pub zero_hop: Vec<ConceptId>,
    /// Concepts linked from the response.
    pub golden: Vec<ConceptId>,
}

impl ConversationExample {
    pub fn new(post: Vec<String>, response: Vec<String>, kg: &KnowledgeGraph) -> Self {
        let zero_hop = link_entities(&post, kg);
        let golden = link_entities(&response, kg);
        Self {
            post,
            response,
            zero_hop,
            golden,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Record {
    post: Vec<String>,
    response: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct PostRecord {
    post: Vec<String>,
}

fn records<T, F>(reader: impl BufRead, mut each: F) -> Result<Vec<T>>
where
    F: FnMut(usize, &str) -> Result<T>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(each(i + 1, &line)?);
    }
    Ok(out)
}

/// Reads one JSON object per line with `post` and `response` token arrays.
pub fn read_conversations(reader: impl BufRead, kg: &KnowledgeGraph) -> Result<Vec<ConversationExample>> {
    records(reader, |line_no, line| {
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if rec.post.is_empty() {
            return Err(Error::parse(line_no, "post is empty"));
        }
        if rec.response.is_empty() {
            return Err(Error::parse(line_no, "response is empty"));
        }
        Ok(ConversationExample::new(rec.post, rec.response, kg))
    })
}

pub fn load_conversations(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Vec<ConversationExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_conversations(BufReader::new(file), kg)
}

/// Reads posts only; a `response` field, if present, is ignored.
pub fn read_posts(reader: impl BufRead) -> Result<Vec<Vec<String>>> {
    records(reader, |line_no, line| {
        let rec: PostRecord = serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        Ok(rec.post)
    })
}

pub fn load_posts(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_posts(BufReader::new(file))
}

/// Serialises a pair in the conversation file format.
pub fn conversation_line(post: &[String], response: &[String]) -> String {
    serde_json::to_string(&Record {
        post: post.to_vec(),
        response: response.to_vec(),
    })
    .expect("string arrays always serialise")
}
