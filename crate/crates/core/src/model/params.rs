use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::diffmath::{Activation, Ffn, GruCell, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::knowledge::{KgEmbeddings, WordVocab};

/// Shape of a model. Words, concepts and relations share `embed_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Number of graph layers over the central graph.
    pub layers: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("dimensions must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layer count must be at least 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the dimension fields.
    pub fn fingerprint(&self) -> String {
        let text = format!(
            "embed_dim={};hidden_dim={};layers={}",
            self.embed_dim, self.hidden_dim, self.layers
        );
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GnnLayer {
    /// p^l from the summed zero-hop vectors.
    pub utter: Ffn,
    /// Neighbor message from `[r ; g_j]`.
    pub message: Ffn,
    /// Node update from `[g_i ; p ; Σ messages]`.
    pub update: Ffn,
}

#[derive(Debug, Clone)]
pub(crate) struct Handles {
    pub word_emb: ParamId,
    pub concept_emb: ParamId,
    pub relation_emb: ParamId,
    /// Concept embeddings into hidden space; present when the sizes differ.
    pub concept_in: Option<ParamId>,
    /// Hidden vectors into embedding space for dot products with embeddings.
    pub query_out: Option<ParamId>,
    pub utter_gru: GruCell,
    pub gnn: Vec<GnnLayer>,
    pub outer_wr: ParamId,
    pub outer_wh: ParamId,
    pub outer_wt: ParamId,
    /// Outer flow vectors into hidden space for the γ attention scores.
    pub flow_proj: ParamId,
    pub context: Ffn,
    pub dec_gru: GruCell,
    pub gate: Ffn,
}

/// All trainable weights plus the word vocabulary they are indexed by.
#[derive(Debug, Clone)]
pub struct ConceptFlow {
    pub config: ModelConfig,
    pub words: WordVocab,
    pub store: ParamStore,
    pub(crate) h: Handles,
}

impl ConceptFlow {
    /// Builds a model with concept and relation tables copied from `kg_emb`
    /// and every other weight drawn from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, words: WordVocab, kg_emb: &KgEmbeddings, seed: u64) -> Result<Self> {
        config.validate()?;
        if kg_emb.dim() != config.embed_dim || kg_emb.relations.cols() != config.embed_dim {
            return Err(Error::Dimension(format!(
                "concept embeddings have {} columns, model expects {}",
                kg_emb.dim(),
                config.embed_dim
            )));
        }
        let (e, hd) = (config.embed_dim, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let word_emb = store.add_uniform("embed.words", vec![words.len(), e], 0.1, &mut rng);
        let concept_emb = store.add("embed.concepts", kg_emb.concepts.clone());
        let relation_emb = store.add("embed.relations", kg_emb.relations.clone());
        let (concept_in, query_out) = if e == hd {
            (None, None)
        } else {
            (
                Some(store.add_xavier("proj.concept_in", hd, e, &mut rng)),
                Some(store.add_xavier("proj.query_out", e, hd, &mut rng)),
            )
        };
        let utter_gru = GruCell::new(&mut store, "encoder.gru", e, hd, &mut rng);
        let gnn = (0..config.layers)
            .map(|l| GnnLayer {
                utter: Ffn::new(&mut store, &format!("gnn.{l}.utter"), hd, hd, Activation::Tanh, &mut rng),
                message: Ffn::new(&mut store, &format!("gnn.{l}.message"), e + hd, hd, Activation::Tanh, &mut rng),
                update: Ffn::new(&mut store, &format!("gnn.{l}.update"), 3 * hd, hd, Activation::Tanh, &mut rng),
            })
            .collect();
        let outer_wr = store.add_xavier("outer.w_r", e, e, &mut rng);
        let outer_wh = store.add_xavier("outer.w_h", e, e, &mut rng);
        let outer_wt = store.add_xavier("outer.w_t", e, e, &mut rng);
        let flow_proj = store.add_xavier("decoder.flow_proj", hd, 2 * e, &mut rng);
        let context = Ffn::new(&mut store, "decoder.context", 2 * hd + 2 * e, hd, Activation::Tanh, &mut rng);
        let dec_gru = GruCell::new(&mut store, "decoder.gru", hd + e, hd, &mut rng);
        let gate = Ffn::new(&mut store, "decoder.gate", hd, 3, Activation::Identity, &mut rng);

        Ok(Self {
            config,
            words,
            store,
            h: Handles {
                word_emb,
                concept_emb,
                relation_emb,
                concept_in,
                query_out,
                utter_gru,
                gnn,
                outer_wr,
                outer_wh,
                outer_wt,
                flow_proj,
                context,
                dec_gru,
                gate,
            },
        })
    }

    /// Rebuilds a model around saved tensors; names and shapes must match the
    /// layout `config` implies.
    pub fn from_store(config: ModelConfig, words: WordVocab, store: ParamStore) -> Result<Self> {
        let table = |name: &str| {
            store
                .find(name)
                .map(|id| store.get(id).clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let placeholder = KgEmbeddings {
            concepts: table("embed.concepts")?,
            relations: table("embed.relations")?,
        };
        let mut model = Self::new(config, words, &placeholder, 0)?;
        model.load_store(store)?;
        Ok(model)
    }

    pub fn num_concepts(&self) -> usize {
        self.store.get(self.h.concept_emb).rows()
    }

    pub fn concept_embeddings(&self) -> &Tensor {
        self.store.get(self.h.concept_emb)
    }

    pub fn num_relations(&self) -> usize {
        self.store.get(self.h.relation_emb).rows()
    }

    /// Replaces every parameter value, keeping the layout.
    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.store.len(),
                store.len()
            )));
        }
        for ((_, name_a, a), (_, name_b, b)) in self.store.iter().zip(store.iter()) {
            if name_a != name_b || a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name_b}` {:?} does not match `{name_a}` {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        self.store = store;
        Ok(())
    }

    pub(crate) fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(&self.store, id)
    }

    /// Hidden-space vector mapped into embedding space.
    pub(crate) fn query(&self, tape: &mut Tape, v: Var) -> Var {
        match self.h.query_out {
            Some(w) => {
                let w = self.p(tape, w);
                tape.matvec(w, v)
            }
            None => v,
        }
    }
}
