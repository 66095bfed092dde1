//! Commonsense triples, entity linking, concept embeddings and the
//! conversation corpus.

mod conversation;
mod embedding_file;
mod graph;
mod linking;
mod transe;
mod vocab;

pub use conversation::{
    conversation_line, load_conversations, load_posts, read_conversations, read_posts,
    ConversationExample,
};
pub use embedding_file::{align_embeddings, load_embeddings, read_embeddings, save_embeddings, write_embeddings};
pub use graph::{ConceptId, Direction, KnowledgeGraph, Neighbor, RelationId, Triple};
pub use linking::link_entities;
pub use transe::{pretrain_transe, KgEmbeddings, TranseConfig};
pub use vocab::{Vocab, WordVocab};
