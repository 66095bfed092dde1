use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::encoders::{AttentionDump, Encoded};
use super::params::ConceptFlow;
use crate::diffmath::{argmax, Tape, Var};
use crate::error::{Error, Result};
use crate::graph_builder::ConceptGraph;
use crate::knowledge::{ConceptId, KnowledgeGraph, WordVocab};

/// Where an output token comes from. The discriminant is the gate class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Word = 0,
    Central = 1,
    Outer = 2,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Word, Source::Central, Source::Outer];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Source::Word => "word",
            Source::Central => "central",
            Source::Outer => "outer",
        }
    }
}

/// A decoder input token: word ids embed through the word table, concepts
/// through the concept table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Word(usize),
    Concept(ConceptId),
}

/// One supervised output position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub source: Source,
    /// Index into the source's candidate list: word id, position in V⁰ ∪ V¹,
    /// or position in V².
    pub index: usize,
    /// What the next step reads back.
    pub token: Token,
}

/// A conversation mapped onto model ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prepared {
    pub post: Vec<usize>,
    /// Response targets followed by end-of-sequence.
    pub targets: Vec<Target>,
    /// Response tokens naming a concept outside the graph, supervised as words.
    pub fallbacks: usize,
}

/// Labels each response token with its source class: V² concepts are outer,
/// V⁰ ∪ V¹ concepts are central, everything else is a word.
pub fn prepare(
    words: &WordVocab,
    kg: &KnowledgeGraph,
    post: &[String],
    response: &[String],
    graph: &ConceptGraph,
) -> Prepared {
    let central = graph.central_concepts();
    let mut targets = Vec::with_capacity(response.len() + 1);
    let mut fallbacks = 0;
    for tok in response {
        let concept = kg.concept_id(tok);
        let target = match concept {
            Some(c) if graph.is_two_hop(c) => Target {
                source: Source::Outer,
                index: graph.two_hop.binary_search(&c).unwrap(),
                token: Token::Concept(c),
            },
            Some(c) if graph.is_central(c) => Target {
                source: Source::Central,
                index: central.iter().position(|&x| x == c).unwrap(),
                token: Token::Concept(c),
            },
            _ => {
                if concept.is_some() {
                    fallbacks += 1;
                }
                let id = words.id(tok);
                Target {
                    source: Source::Word,
                    index: id,
                    token: Token::Word(id),
                }
            }
        };
        targets.push(target);
    }
    targets.push(Target {
        source: Source::Word,
        index: WordVocab::EOS,
        token: Token::Word(WordVocab::EOS),
    });
    Prepared {
        post: post.iter().map(|w| words.id(w)).collect(),
        targets,
        fallbacks,
    }
}

/// Tape handles shared by every decoding step of one conversation.
#[derive(Debug, Clone)]
pub struct DecoderContext {
    /// Utterance states, `m × hidden`.
    pub text: Var,
    /// Central concept vectors, `|V⁰ ∪ V¹| × hidden`.
    pub central: Option<Var>,
    /// Outer flow vectors, `heads × 2·embed`, and their hidden projections.
    pub outer: Option<(Var, Var)>,
    /// Two-hop concept embeddings, `|V²| × embed`.
    pub two_hop: Option<Var>,
    pub initial_state: Var,
    pub central_ids: Vec<ConceptId>,
    pub two_hop_ids: Vec<ConceptId>,
    pub outer_heads: Vec<ConceptId>,
}

impl DecoderContext {
    pub fn available(&self, source: Source) -> bool {
        match source {
            Source::Word => true,
            Source::Central => self.central.is_some(),
            Source::Outer => self.two_hop.is_some(),
        }
    }

    /// Gate classes with at least one candidate, ascending.
    pub fn available_sources(&self) -> Vec<Source> {
        Source::ALL.into_iter().filter(|s| self.available(*s)).collect()
    }
}

/// Tape handles for one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct DecoderStep {
    pub state: Var,
    pub context: Var,
    /// Attention over utterance positions.
    pub alpha: Var,
    /// Attention over central concepts.
    pub beta: Option<Var>,
    /// Attention over outer flow heads.
    pub gamma: Option<Var>,
    pub gate_logits: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    /// Samples from the `k` most probable candidates of the chosen source.
    TopK { k: usize, seed: u64 },
}

impl DecodeMode {
    pub const DEFAULT_K: usize = 5;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub source: Source,
    pub gate_logits: [f64; 3],
    /// Top attention entries as `(label, weight)`, at most five each.
    pub alpha: Vec<(String, f64)>,
    pub beta: Vec<(String, f64)>,
    pub gamma: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationStep {
    pub token: String,
    pub source: Source,
    pub trace: StepTrace,
}

/// Generated tokens, end-of-sequence excluded, plus per-step records that
/// include the end-of-sequence step when one was produced.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationResult {
    pub tokens: Vec<String>,
    pub sources: Vec<Source>,
    pub steps: Vec<GenerationStep>,
    pub finished: bool,
    pub encoder: AttentionDump,
}

fn top_entries(weights: &[f64], label: impl Fn(usize) -> String) -> Vec<(String, f64)> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx.into_iter().take(5).map(|i| (label(i), weights[i])).collect()
}

impl ConceptFlow {
    pub fn decoder_context(&self, tape: &mut Tape, encoded: &Encoded, graph: &ConceptGraph) -> DecoderContext {
        let text = tape.stack_rows(&encoded.utterance.states);
        let central = encoded.central.as_ref().map(|c| tape.stack_rows(&c.vectors));
        let outer = encoded.outer.as_ref().map(|o| {
            let raw = tape.stack_rows(&o.vectors);
            let w = self.p(tape, self.h.flow_proj);
            let proj: Vec<Var> = o.vectors.iter().map(|&f| tape.matvec(w, f)).collect();
            (raw, tape.stack_rows(&proj))
        });
        let two_hop = if graph.two_hop.is_empty() {
            None
        } else {
            let concepts = self.p(tape, self.h.concept_emb);
            let rows: Vec<Var> = graph.two_hop.iter().map(|c| tape.row(concepts, c.0)).collect();
            Some(tape.stack_rows(&rows))
        };
        DecoderContext {
            text,
            central,
            outer,
            two_hop,
            initial_state: encoded.utterance.last(),
            central_ids: encoded
                .central
                .as_ref()
                .map(|c| c.structure.concepts.clone())
                .unwrap_or_default(),
            two_hop_ids: graph.two_hop.clone(),
            outer_heads: encoded.outer.as_ref().map(|o| o.heads.clone()).unwrap_or_default(),
        }
    }

    pub fn embed_token(&self, tape: &mut Tape, token: Token) -> Var {
        match token {
            Token::Word(w) => {
                let table = self.p(tape, self.h.word_emb);
                tape.row(table, w)
            }
            Token::Concept(c) => {
                let table = self.p(tape, self.h.concept_emb);
                tape.row(table, c.0)
            }
        }
    }

    /// Attends from `s_prev`, builds the context vector and advances the
    /// state with the previous token. Empty concept sets contribute zeros.
    pub fn decode_step(&self, tape: &mut Tape, ctx: &DecoderContext, s_prev: Var, y_prev: Token) -> Result<DecoderStep> {
        let (e, hd) = (self.config.embed_dim, self.config.hidden_dim);
        let scores = tape.matvec(ctx.text, s_prev);
        let alpha = tape.softmax(scores);
        let c_text = tape.matvec_t(ctx.text, alpha);

        let (beta, c_central) = match ctx.central {
            Some(g) => {
                let scores = tape.matvec(g, s_prev);
                let beta = tape.softmax(scores);
                (Some(beta), tape.matvec_t(g, beta))
            }
            None => (None, tape.vector(vec![0.0; hd])),
        };
        let (gamma, c_outer) = match ctx.outer {
            Some((raw, proj)) => {
                let scores = tape.matvec(proj, s_prev);
                let gamma = tape.softmax(scores);
                (Some(gamma), tape.matvec_t(raw, gamma))
            }
            None => (None, tape.vector(vec![0.0; 2 * e])),
        };

        let joined = tape.concat(&[c_text, c_central, c_outer]);
        let context = self.h.context.forward(tape, &self.store, joined)?;
        let y = self.embed_token(tape, y_prev);
        let input = tape.concat(&[context, y]);
        let state = self.h.dec_gru.step(tape, &self.store, s_prev, input)?;
        let gate_logits = self.h.gate.forward(tape, &self.store, state)?;
        Ok(DecoderStep {
            state,
            context,
            alpha,
            beta,
            gamma,
            gate_logits,
        })
    }

    /// Output distribution of `source` at state `s`.
    pub fn emit_distribution(&self, tape: &mut Tape, ctx: &DecoderContext, s: Var, source: Source) -> Result<Var> {
        let scores = match source {
            Source::Word => {
                let table = self.p(tape, self.h.word_emb);
                let q = self.query(tape, s);
                tape.matvec(table, q)
            }
            Source::Central => {
                let g = ctx.central.ok_or(Error::SourceUnavailable("central"))?;
                tape.matvec(g, s)
            }
            Source::Outer => {
                let e2 = ctx.two_hop.ok_or(Error::SourceUnavailable("outer"))?;
                let q = self.query(tape, s);
                tape.matvec(e2, q)
            }
        };
        Ok(tape.softmax(scores))
    }

    /// Gate distribution restricted to the available sources, in ascending
    /// class order.
    pub fn gate_distribution(&self, tape: &mut Tape, ctx: &DecoderContext, step: &DecoderStep) -> Var {
        let avail: Vec<usize> = ctx.available_sources().iter().map(|s| s.index()).collect();
        let logits = if avail.len() == 3 {
            step.gate_logits
        } else {
            tape.gather(step.gate_logits, &avail)
        };
        tape.softmax(logits)
    }

    /// Steps fed with the golden tokens; step `t` reads target `t − 1`
    /// (begin-of-sequence first).
    pub fn teacher_force(&self, tape: &mut Tape, ctx: &DecoderContext, targets: &[Target]) -> Result<Vec<DecoderStep>> {
        let mut steps = Vec::with_capacity(targets.len());
        let mut s = ctx.initial_state;
        let mut y = Token::Word(WordVocab::BOS);
        for t in targets {
            let step = self.decode_step(tape, ctx, s, y)?;
            s = step.state;
            y = t.token;
            steps.push(step);
        }
        Ok(steps)
    }

    /// Per-token mean of gate and emission cross-entropies.
    pub fn training_loss(&self, tape: &mut Tape, prepared: &Prepared, graph: &ConceptGraph) -> Result<Var> {
        let encoded = self.encode(tape, &prepared.post, graph)?;
        let ctx = self.decoder_context(tape, &encoded, graph);
        let steps = self.teacher_force(tape, &ctx, &prepared.targets)?;
        let avail = ctx.available_sources();
        let mut terms = Vec::with_capacity(2 * steps.len());
        for (step, target) in steps.iter().zip(&prepared.targets) {
            let gate = self.gate_distribution(tape, &ctx, step);
            let class = avail
                .iter()
                .position(|s| *s == target.source)
                .ok_or(Error::SourceUnavailable(target.source.tag()))?;
            terms.push(tape.cross_entropy(gate, class));
            let dist = self.emit_distribution(tape, &ctx, step.state, target.source)?;
            terms.push(tape.cross_entropy(dist, target.index));
        }
        let total = tape.sum(&terms);
        let loss = tape.scale(total, 1.0 / prepared.targets.len() as f64);
        tape.check()?;
        Ok(loss)
    }

    /// Free-running decoding. Concepts surface as their names; generation
    /// stops at end-of-sequence or after `max_len` steps.
    pub fn generate(
        &self,
        kg: &KnowledgeGraph,
        post: &[String],
        graph: &ConceptGraph,
        mode: DecodeMode,
        max_len: usize,
    ) -> Result<GenerationResult> {
        if max_len == 0 {
            return Err(Error::Domain("max_len must be at least 1".into()));
        }
        let post_ids: Vec<usize> = post.iter().map(|w| self.words.id(w)).collect();
        let mut tape = Tape::new();
        let encoded = self.encode(&mut tape, &post_ids, graph)?;
        let ctx = self.decoder_context(&mut tape, &encoded, graph);
        let mut rng = match mode {
            DecodeMode::TopK { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            DecodeMode::Greedy => None,
        };

        let mut out = GenerationResult {
            tokens: Vec::new(),
            sources: Vec::new(),
            steps: Vec::new(),
            finished: false,
            encoder: encoded.attention_dump(),
        };
        let mut s = ctx.initial_state;
        let mut y = Token::Word(WordVocab::BOS);
        for _ in 0..max_len {
            let step = self.decode_step(&mut tape, &ctx, s, y)?;
            let logits: [f64; 3] = tape.data(step.gate_logits).try_into().expect("gate has three logits");
            let masked: Vec<f64> = Source::ALL
                .iter()
                .map(|src| if ctx.available(*src) { logits[src.index()] } else { f64::NEG_INFINITY })
                .collect();
            let source = Source::ALL[argmax(&masked).expect("word source is always available")];
            let dist = self.emit_distribution(&mut tape, &ctx, step.state, source)?;
            tape.check()?;
            let probs = tape.data(dist).to_vec();
            let index = match (&mut rng, mode) {
                (Some(rng), DecodeMode::TopK { k, .. }) => sample_top_k(&probs, k.max(1), rng),
                _ => argmax(&probs).expect("distributions are nonempty"),
            };
            let (token, text) = match source {
                Source::Word => (Token::Word(index), self.words.name(index).to_string()),
                Source::Central => {
                    let c = ctx.central_ids[index];
                    (Token::Concept(c), kg.concept_name(c).to_string())
                }
                Source::Outer => {
                    let c = ctx.two_hop_ids[index];
                    (Token::Concept(c), kg.concept_name(c).to_string())
                }
            };
            let trace = StepTrace {
                source,
                gate_logits: logits,
                alpha: top_entries(tape.data(step.alpha), |i| post.get(i).cloned().unwrap_or_default()),
                beta: step
                    .beta
                    .map(|b| top_entries(tape.data(b), |i| kg.concept_name(ctx.central_ids[i]).to_string()))
                    .unwrap_or_default(),
                gamma: step
                    .gamma
                    .map(|g| top_entries(tape.data(g), |i| kg.concept_name(ctx.outer_heads[i]).to_string()))
                    .unwrap_or_default(),
            };
            out.steps.push(GenerationStep {
                token: text.clone(),
                source,
                trace,
            });
            if token == Token::Word(WordVocab::EOS) {
                out.finished = true;
                break;
            }
            out.tokens.push(text);
            out.sources.push(source);
            s = step.state;
            y = token;
        }
        Ok(out)
    }
}

/// Draws from the `k` most probable entries, renormalized; ties in
/// probability rank the lower index first.
fn sample_top_k(probs: &[f64], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    let mass: f64 = idx.iter().map(|&i| probs[i]).sum();
    let mut u = rng.gen::<f64>() * mass;
    for &i in &idx {
        u -= probs[i];
        if u <= 0.0 {
            return i;
        }
    }
    *idx.last().unwrap()
}
