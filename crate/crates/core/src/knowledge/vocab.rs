use std::collections::HashMap;

/// String interner assigning ids in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for s in items {
            v.insert(s);
        }
        v
    }

    /// Returns the existing id or assigns the next one.
    pub fn insert(&mut self, item: impl Into<String>) -> usize {
        let item = item.into();
        if let Some(&id) = self.index.get(&item) {
            return id;
        }
        let id = self.items.len();
        self.index.insert(item.clone(), id);
        self.items.push(item);
        id
    }

    pub fn id(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Word vocabulary with reserved unknown, begin and end tokens at ids 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    vocab: Vocab,
}

impl WordVocab {
    pub const UNK: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const SPECIALS: [&'static str; 3] = ["<unk>", "<bos>", "<eos>"];

    pub fn new() -> Self {
        Self {
            vocab: Vocab::from_items(Self::SPECIALS),
        }
    }

    /// Builds a vocabulary from token sequences in first-appearance order.
    pub fn build<'a>(sequences: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut v = Self::new();
        for seq in sequences {
            for tok in seq {
                v.vocab.insert(tok.as_str());
            }
        }
        v
    }

    /// Restores a vocabulary from its full item list (specials included).
    pub fn from_items(items: &[String]) -> Option<Self> {
        if items.len() < 3 || items[..3] != Self::SPECIALS {
            return None;
        }
        Some(Self {
            vocab: Vocab::from_items(items.iter().cloned()),
        })
    }

    pub fn id(&self, word: &str) -> usize {
        self.vocab.id(word).unwrap_or(Self::UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.id(word).is_some()
    }

    pub fn name(&self, id: usize) -> &str {
        self.vocab.name(id)
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn items(&self) -> &[String] {
        self.vocab.items()
    }
}

impl Default for WordVocab {
    fn default() -> Self {
        Self::new()
    }
}
