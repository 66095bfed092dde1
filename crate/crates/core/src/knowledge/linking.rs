use super::graph::{ConceptId, KnowledgeGraph};

/// Zero-hop concepts: every single-token concept whose name equals a token.
///
/// Matching is exact, so tokens are expected to be lowercased already.
/// Multi-word concepts (names containing whitespace or `_`) never match.
/// The result is deduplicated and sorted by id.
pub fn link_entities<S: AsRef<str>>(tokens: &[S], kg: &KnowledgeGraph) -> Vec<ConceptId> {
    let mut ids: Vec<ConceptId> = tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| is_single_token(t))
        .filter_map(|t| kg.concept_id(t))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn is_single_token(name: &str) -> bool {
    !name.is_empty() && !name.contains(|c: char| c.is_whitespace() || c == '_')
}
