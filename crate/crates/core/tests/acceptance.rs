//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the lines reach the terminal under
//! `cargo test`; any failure makes the process exit nonzero.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conceptflow::diffmath::{check_gradients, softmax, Adam, Tape, Tensor};
use conceptflow::graph_builder::{build_concept_graph, hop_statistics, prune_two_hop, ConceptGraph};
use conceptflow::knowledge::{
    link_entities, load_conversations, pretrain_transe, ConceptId, ConversationExample, KgEmbeddings,
    KnowledgeGraph, TranseConfig, WordVocab,
};
use conceptflow::metrics::{bleu, concept_prf, corpus_rouge, dist_n, ent_n, nist, RougeVariant};
use conceptflow::model::{prepare, ConceptFlow, DecodeMode, ModelConfig, Source};
use conceptflow::selection::{
    golden_two_hop_coverage, select_top_k, train_selector, SelectConfig, SelectionScore,
};
use conceptflow::training::{build_examples, mean_loss, train, TrainConfig, TrainingExample};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// random toy instances

const FILLERS: [&str; 6] = ["i", "the", "so", "we", "like", "very"];

struct Instance {
    kg: KnowledgeGraph,
    post: Vec<String>,
    response: Vec<String>,
}

/// A random tree of 4..=10 concepts plus a few extra edges; the post links
/// one or two concepts and the response mixes fillers with graph concepts.
fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(4..=10);
    let names: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let rels = ["rel_a", "rel_b", "rel_c"];
    let mut triples = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        let r = rels[rng.gen_range(0..rels.len())];
        if rng.gen_bool(0.5) {
            triples.push((names[j].clone(), r, names[i].clone()));
        } else {
            triples.push((names[i].clone(), r, names[j].clone()));
        }
    }
    for _ in 0..rng.gen_range(0..3) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            triples.push((names[a].clone(), rels[rng.gen_range(0..rels.len())], names[b].clone()));
        }
    }
    let kg = KnowledgeGraph::from_triples(triples.iter().map(|(h, r, t)| (h.as_str(), *r, t.as_str())));

    let mut post = vec![names[0].clone()];
    if rng.gen_bool(0.4) {
        post.push(names[rng.gen_range(1..n)].clone());
    }
    while post.len() < rng.gen_range(2..=5) {
        post.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string());
    }
    post.shuffle(rng);

    let graph = build_concept_graph(&link_entities(&post, &kg), &kg).unwrap();
    let mut response = Vec::new();
    let len = rng.gen_range(1..=5);
    while response.len() < len {
        let pick = rng.gen_range(0..3);
        let pool: &[ConceptId] = match pick {
            0 => &graph.one_hop,
            1 => &graph.two_hop,
            _ => &[],
        };
        match pool.choose(rng) {
            Some(c) => response.push(kg.concept_name(*c).to_string()),
            None => response.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string()),
        }
    }
    Instance { kg, post, response }
}

fn random_embeddings(kg: &KnowledgeGraph, dim: usize, rng: &mut ChaCha8Rng) -> KgEmbeddings {
    let mut table = |rows: usize| {
        Tensor::new(vec![rows, dim], (0..rows * dim).map(|_| rng.gen_range(-0.8..0.8)).collect()).unwrap()
    };
    KgEmbeddings {
        concepts: table(kg.num_concepts()),
        relations: table(kg.num_relations()),
    }
}

fn random_model(inst: &Instance, rng: &mut ChaCha8Rng) -> ConceptFlow {
    let words = WordVocab::build([inst.post.as_slice(), inst.response.as_slice()]);
    let config = ModelConfig {
        embed_dim: 3,
        hidden_dim: rng.gen_range(3..=4),
        layers: rng.gen_range(1..=2),
    };
    let emb = random_embeddings(&inst.kg, config.embed_dim, rng);
    let mut model = ConceptFlow::new(config, words, &emb, rng.gen()).unwrap();
    // biases start at zero; random values make every path carry gradient
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.name(id).ends_with("bias") {
            for v in model.store.get_mut(id).data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    model
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut with_outer = 0;
    let instances = 24;
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        let mut model = random_model(&inst, &mut rng);
        let graph = build_concept_graph(&link_entities(&inst.post, &inst.kg), &inst.kg).unwrap();
        with_outer += usize::from(graph.num_flows() > 0);
        let prepared = prepare(&model.words, &inst.kg, &inst.post, &inst.response, &graph);
        let template = model.clone();
        let report = check_gradients(&mut model.store, 1e-5, |store, tape| {
            let mut m = template.clone();
            m.store = store.clone();
            m.training_loss(tape, &prepared, &graph)
        })
        .unwrap();
        worst = worst.max(report.max_rel_err);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{instances} instances ({with_outer} with outer flows), max relative error {worst:.2e}, {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. distribution invariants

fn is_distribution(p: &[f64]) -> bool {
    !p.is_empty() && p.iter().all(|v| *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}

fn distribution_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut bad: BTreeMap<&str, usize> = BTreeMap::new();
    let mut record = |kind: &'static str, p: &[f64], counts: &mut BTreeMap<&str, usize>| {
        *counts.entry(kind).or_insert(0) += 1;
        if !is_distribution(p) {
            *bad.entry(kind).or_insert(0) += 1;
        }
    };
    for _ in 0..2000 {
        let n = rng.gen_range(1..20);
        let scale = [1.0, 50.0, 800.0][rng.gen_range(0..3)];
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        record("softmax", &softmax(&scores).unwrap(), &mut counts);
    }
    let total = |c: &BTreeMap<&str, usize>| c.values().sum::<usize>();
    while total(&counts) < 10_000 {
        let inst = random_instance(&mut rng);
        let model = random_model(&inst, &mut rng);
        let graph = build_concept_graph(&link_entities(&inst.post, &inst.kg), &inst.kg).unwrap();
        let prepared = prepare(&model.words, &inst.kg, &inst.post, &inst.response, &graph);
        let mut tape = Tape::new();
        let enc = model.encode(&mut tape, &prepared.post, &graph).unwrap();
        if let Some(outer) = &enc.outer {
            for theta in &outer.theta {
                record("theta", theta, &mut counts);
            }
        }
        if let Some(central) = &enc.central {
            for pr in &central.pagerank {
                record("pagerank", pr, &mut counts);
            }
        }
        let ctx = model.decoder_context(&mut tape, &enc, &graph);
        let steps = model.teacher_force(&mut tape, &ctx, &prepared.targets).unwrap();
        for step in &steps {
            record("alpha", tape.data(step.alpha), &mut counts);
            if let Some(b) = step.beta {
                record("beta", tape.data(b), &mut counts);
            }
            if let Some(g) = step.gamma {
                record("gamma", tape.data(g), &mut counts);
            }
            let gate = model.gate_distribution(&mut tape, &ctx, step);
            record("gate", tape.data(gate), &mut counts);
            for src in Source::ALL {
                if ctx.available(src) {
                    let d = model.emit_distribution(&mut tape, &ctx, step.state, src).unwrap();
                    record(
                        match src {
                            Source::Word => "emit-word",
                            Source::Central => "emit-central",
                            Source::Outer => "emit-outer",
                        },
                        tape.data(d),
                        &mut counts,
                    );
                }
            }
        }
    }
    let breakdown: Vec<String> = counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let failures: usize = bad.values().sum();
    outcome(
        failures == 0,
        format!("{} vectors, {failures} violations ({})", total(&counts), breakdown.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 3. graph construction against all-pairs shortest paths

fn random_kg(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = rng.gen_range(2..=40);
    let m = rng.gen_range(0..=2 * n);
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let rels = ["r0", "r1"];
    // every node appears in at least one triple; self loops included
    let mut triples: Vec<(usize, &str, usize)> = (0..n).map(|i| (i, rels[0], rng.gen_range(0..n))).collect();
    for _ in 0..m {
        triples.push((rng.gen_range(0..n), rels[rng.gen_range(0..2)], rng.gen_range(0..n)));
    }
    KnowledgeGraph::from_triples(triples.iter().map(|(h, r, t)| (names[*h].as_str(), *r, names[*t].as_str())))
}

/// Floyd-Warshall over the undirected triple list.
fn all_pairs(kg: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let n = kg.num_concepts();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for t in kg.triples() {
        if t.head != t.tail {
            d[t.head.0][t.tail.0] = 1;
            d[t.tail.0][t.head.0] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

fn graph_oracle_mismatch(kg: &KnowledgeGraph, seeds: &[ConceptId], g: &ConceptGraph) -> Option<String> {
    let d = all_pairs(kg);
    let dist = |c: usize| seeds.iter().map(|s| d[s.0][c]).min().unwrap();
    let class = |k: usize| -> Vec<ConceptId> { (0..kg.num_concepts()).filter(|&c| dist(c) == k).map(ConceptId).collect() };
    for (k, got) in [&g.zero_hop, &g.one_hop, &g.two_hop].into_iter().enumerate() {
        if *got != class(k) {
            return Some(format!("V{k}: got {got:?}, oracle {:?}", class(k)));
        }
    }
    let central = |c: ConceptId| dist(c.0) <= 1;
    let mut want_edges: Vec<_> = kg
        .triples()
        .iter()
        .filter(|t| t.head != t.tail && central(t.head) && central(t.tail))
        .map(|t| (t.head, t.relation, t.tail))
        .collect();
    let mut got_edges: Vec<_> = g.central_edges.iter().map(|t| (t.head, t.relation, t.tail)).collect();
    want_edges.sort();
    got_edges.sort();
    if want_edges != got_edges {
        return Some("central edges differ".into());
    }
    let mut want_flows: Vec<_> = kg
        .triples()
        .iter()
        .flat_map(|t| [(t.head, t.relation, t.tail), (t.tail, t.relation, t.head)])
        .filter(|(h, _, t)| dist(h.0) == 1 && dist(t.0) == 2)
        .collect();
    let mut got_flows: Vec<_> = g
        .outer_flows
        .iter()
        .flat_map(|h| h.flows.iter().map(move |f| (h.head, f.relation, f.tail)))
        .collect();
    want_flows.sort();
    got_flows.sort();
    (want_flows != got_flows).then(|| "outer flows differ".into())
}

fn graph_construction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut failures = Vec::new();
    let mut sizes = [0usize; 3];
    for i in 0..200 {
        let kg = random_kg(&mut rng);
        let n = kg.num_concepts();
        let mut seeds: Vec<ConceptId> = (0..rng.gen_range(1..=3.min(n))).map(|_| ConceptId(rng.gen_range(0..n))).collect();
        seeds.sort();
        seeds.dedup();
        let g = build_concept_graph(&seeds, &kg).unwrap();
        sizes[0] += g.zero_hop.len();
        sizes[1] += g.one_hop.len();
        sizes[2] += g.two_hop.len();
        if let Some(why) = graph_oracle_mismatch(&kg, &seeds, &g) {
            failures.push(format!("kg {i}: {why}"));
            continue;
        }
        let keep: Vec<ConceptId> = g.two_hop.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        let p = prune_two_hop(&g, &keep).unwrap();
        let flows_ok = p
            .outer_flows
            .iter()
            .all(|h| g.one_hop.contains(&h.head) && h.flows.iter().all(|f| keep.contains(&f.tail)));
        let kept_flows = g.outer_flows.iter().flat_map(|h| &h.flows).filter(|f| keep.contains(&f.tail)).count();
        if p.zero_hop != g.zero_hop
            || p.one_hop != g.one_hop
            || p.central_edges != g.central_edges
            || p.two_hop != keep
            || !flows_ok
            || p.num_flows() != kept_flows
        {
            failures.push(format!("kg {i}: pruning changed the central graph or kept stray flows"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "200 graphs, {}/{}/{} concepts at hop 0/1/2, {} mismatches{}, {}",
            sizes[0],
            sizes[1],
            sizes[2],
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. hop coverage

fn hop_coverage() -> Outcome {
    let chain_kg = KnowledgeGraph::load("tests/fixtures/chain_triples.tsv").unwrap();
    let chain = load_conversations("tests/fixtures/chain_conversations.jsonl", &chain_kg).unwrap();
    let chain_ratios: Vec<f64> = hop_statistics(&chain, &chain_kg, 2).rows.iter().map(|r| r.ratio).collect();
    let chain_ok = chain_ratios == [0.0, 0.5, 1.0];

    let mut monotone = true;
    let mut corpora = 0;
    let fixture_kg = KnowledgeGraph::load("tests/fixtures/triples.tsv").unwrap();
    let fixture = load_conversations("tests/fixtures/conversations.jsonl", &fixture_kg).unwrap();
    let mut check = |examples: &[ConversationExample], kg: &KnowledgeGraph| {
        corpora += 1;
        let rows = hop_statistics(examples, kg, 4).rows;
        monotone &= rows.windows(2).all(|w| w[1].ratio >= w[0].ratio && w[1].amount >= w[0].amount);
    };
    check(&fixture, &fixture_kg);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..100 {
        let kg = random_kg(&mut rng);
        let names = kg.concept_names().to_vec();
        let examples: Vec<ConversationExample> = (0..rng.gen_range(1..6))
            .map(|_| {
                let pick = |rng: &mut ChaCha8Rng, k: usize| -> Vec<String> {
                    (0..k).map(|_| names.choose(rng).unwrap().clone()).chain(["filler".to_string()]).collect()
                };
                let (a, b) = (rng.gen_range(0..3), rng.gen_range(0..4));
                ConversationExample::new(pick(&mut rng, a), pick(&mut rng, b), &kg)
            })
            .collect();
        check(&examples, &kg);
    }
    outcome(
        chain_ok && monotone,
        format!("chain fixture ratios {chain_ratios:?}; non-decreasing on {corpora} corpora: {monotone}"),
    )
}

// ---------------------------------------------------------------------------
// 5. overfitting a small corpus

fn overfit() -> Outcome {
    let start = Instant::now();
    let kg = KnowledgeGraph::load("tests/fixtures/triples.tsv").unwrap();
    let examples = load_conversations("tests/fixtures/conversations.jsonl", &kg).unwrap();
    let words = WordVocab::build(examples.iter().flat_map(|e| [e.post.as_slice(), e.response.as_slice()]));
    let emb = pretrain_transe(&kg, &TranseConfig::default()).unwrap();
    let config = ModelConfig {
        embed_dim: emb.dim(),
        hidden_dim: 32,
        layers: 1,
    };
    let mut model = ConceptFlow::new(config, words, &emb, 1).unwrap();
    let data = build_examples(&model, &kg, &examples, None).unwrap();
    let initial = mean_loss(&model, &data).unwrap();
    let cfg = TrainConfig {
        lr: 0.005,
        epochs: 200,
        batch_size: 1,
        clip_norm: Some(5.0),
        seed: 3,
    };
    train(&mut model, &mut Adam::new(cfg.lr), &data, &cfg, |_, _| {}).unwrap();
    let last = mean_loss(&model, &data).unwrap();
    let exact = examples
        .iter()
        .zip(&data)
        .filter(|(e, d)| model.generate(&kg, &e.post, &d.graph, DecodeMode::Greedy, 20).unwrap().tokens == e.response)
        .count();
    let elapsed = start.elapsed();
    outcome(
        last < 0.1 * initial && exact >= 18 && elapsed < Duration::from_secs(300),
        format!(
            "{} pairs, loss {initial:.4} -> {last:.4} (ratio {:.2e}), {exact}/{} exact greedy reproductions, {}",
            examples.len(),
            last / initial,
            examples.len(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. selection against random pruning

/// Topic keywords reach a hub; every hub reaches the shared response
/// concepts plus its own distractors, all at two hops.
fn selection_corpus() -> (KnowledgeGraph, Vec<ConversationExample>) {
    let shared = ["tasty", "cozy", "loud"];
    let topics = 12;
    let mut triples = Vec::new();
    for t in 0..topics {
        triples.push((format!("topic{t}"), "RelatedTo", format!("hub{t}")));
        for s in shared {
            triples.push((format!("hub{t}"), "HasProperty", s.to_string()));
        }
        for d in 0..5 {
            triples.push((format!("hub{t}"), "RelatedTo", format!("noise{t}x{d}")));
        }
    }
    let kg = KnowledgeGraph::from_triples(triples.iter().map(|(h, r, t)| (h.as_str(), *r, t.as_str())));
    let openers = ["i saw", "tell me about", "what about", "we discussed"];
    let mut examples = Vec::new();
    for i in 0..48 {
        let t = i % topics;
        let s = shared[t % shared.len()];
        let post = toks(&format!("{} topic{t}", openers[i % openers.len()]));
        let response = toks(&format!("it was {s} indeed"));
        examples.push(ConversationExample::new(post, response, &kg));
    }
    (kg, examples)
}

fn top_k_oracle(score: &SelectionScore, k: usize) -> Vec<ConceptId> {
    let mut pairs: Vec<(f64, ConceptId)> = score.scores.iter().copied().zip(score.candidates.iter().copied()).collect();
    let mut out = Vec::new();
    while out.len() < k && !pairs.is_empty() {
        let mut best = 0;
        for i in 1..pairs.len() {
            let (s, c) = pairs[i];
            let (bs, bc) = pairs[best];
            if s > bs || (s == bs && c < bc) {
                best = i;
            }
        }
        out.push(pairs.remove(best).1);
    }
    out
}

fn selection() -> Outcome {
    let start = Instant::now();
    let (kg, examples) = selection_corpus();
    let words = WordVocab::build(examples.iter().flat_map(|e| [e.post.as_slice(), e.response.as_slice()]));
    let emb = pretrain_transe(&kg, &TranseConfig { dim: 16, ..TranseConfig::default() }).unwrap();
    let config = ModelConfig {
        embed_dim: 16,
        hidden_dim: 16,
        layers: 1,
    };
    let k = 2;
    let golden: Vec<Vec<ConceptId>> = examples.iter().map(|e| e.golden.clone()).collect();
    let (mut attention, mut random) = (0.0, 0.0);
    let mut graphs: Vec<ConceptGraph> = Vec::new();
    for seed in 0..10u64 {
        let model = ConceptFlow::new(config, words.clone(), &emb, seed).unwrap();
        let data: Vec<TrainingExample> = build_examples(&model, &kg, &examples, None).unwrap();
        graphs = data.iter().map(|d| d.graph.clone()).collect();
        let cfg = SelectConfig {
            fraction: 0.25,
            k,
            seed,
            train: TrainConfig {
                lr: 0.01,
                epochs: 30,
                batch_size: 1,
                clip_norm: Some(5.0),
                seed,
            },
        };
        let (selector, _) = train_selector(model, &data, &cfg).unwrap();
        let keep = selector.select(&data, k).unwrap();
        attention += golden_two_hop_coverage(&graphs, &golden, &keep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rand_keep: Vec<Vec<ConceptId>> = graphs
            .iter()
            .map(|g| g.two_hop.choose_multiple(&mut rng, k).copied().collect())
            .collect();
        random += golden_two_hop_coverage(&graphs, &golden, &rand_keep).unwrap();
    }
    attention /= 10.0;
    random /= 10.0;
    let v2 = graphs[0].two_hop.len();

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut oracle_mismatches = 0;
    let instances = 2000;
    for _ in 0..instances {
        let n = rng.gen_range(1..30);
        let mut ids: Vec<usize> = (0..200).collect();
        ids.shuffle(&mut rng);
        let score = SelectionScore {
            candidates: ids[..n].iter().map(|&i| ConceptId(i)).collect(),
            // few distinct values so ties are common
            scores: (0..n).map(|_| f64::from(rng.gen_range(0..6)) * 0.25).collect(),
            steps: 1,
        };
        let k = rng.gen_range(0..n + 3);
        oracle_mismatches += usize::from(select_top_k(&score, k) != top_k_oracle(&score, k));
    }
    outcome(
        attention >= random && oracle_mismatches == 0,
        format!(
            "K = {k} of {v2} two-hop concepts: golden coverage {attention:.3} attention vs {random:.3} random over 10 seeds; \
             top-K oracle mismatches {oracle_mismatches}/{instances}, {}",
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. metrics against naive counting

fn grams(s: &[String], n: usize) -> Vec<Vec<String>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn naive_clipped(h: &[String], r: &[String], n: usize) -> Vec<(Vec<String>, usize)> {
    let hg = grams(h, n);
    let rg = grams(r, n);
    let mut seen: Vec<Vec<String>> = Vec::new();
    let mut out = Vec::new();
    for g in &hg {
        if seen.contains(g) {
            continue;
        }
        seen.push(g.clone());
        let m = occurrences(&hg, g).min(occurrences(&rg, g));
        if m > 0 {
            out.push((g.clone(), m));
        }
    }
    out
}

fn naive_bleu(hyps: &[Vec<String>], refs: &[Vec<String>], n: usize) -> f64 {
    let mut logp = 0.0;
    for k in 1..=n {
        let mut m = 0;
        let mut t = 0;
        for (h, r) in hyps.iter().zip(refs) {
            m += naive_clipped(h, r, k).iter().map(|x| x.1).sum::<usize>();
            t += grams(h, k).len();
        }
        if m == 0 {
            return 0.0;
        }
        logp += (m as f64 / t as f64).ln() / n as f64;
    }
    let c: usize = hyps.iter().map(|h| h.len()).sum();
    let r: usize = refs.iter().map(|h| h.len()).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * logp.exp()
}

fn naive_nist(hyps: &[Vec<String>], refs: &[Vec<String>], n: usize) -> f64 {
    let all_ref_grams = |k: usize| -> Vec<Vec<String>> { refs.iter().flat_map(|r| grams(r, k)).collect() };
    let ref_words: usize = refs.iter().map(|r| r.len()).sum();
    let mut score = 0.0;
    for k in 1..=n {
        let here = all_ref_grams(k);
        let below = if k > 1 { all_ref_grams(k - 1) } else { Vec::new() };
        let mut num = 0.0;
        let mut den = 0usize;
        for (h, r) in hyps.iter().zip(refs) {
            for (g, c) in naive_clipped(h, r, k) {
                let prefix = if k == 1 { ref_words } else { occurrences(&below, &g[..k - 1]) };
                num += c as f64 * (prefix as f64 / occurrences(&here, &g) as f64).log2();
            }
            den += grams(h, k).len();
        }
        if den > 0 {
            score += num / den as f64;
        }
    }
    let sys: usize = hyps.iter().map(|h| h.len()).sum();
    let ratio = (sys as f64 / ref_words as f64).min(1.0);
    let beta = -(2.0f64.ln()) / (1.5f64.ln() * 1.5f64.ln());
    score * (beta * ratio.ln() * ratio.ln()).exp()
}

fn naive_lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

fn f1(hit: usize, pred: usize, gold: usize) -> f64 {
    if hit == 0 {
        return 0.0;
    }
    let p = hit as f64 / pred as f64;
    let r = hit as f64 / gold as f64;
    2.0 * p * r / (p + r)
}

fn naive_rouge_f1(hyps: &[Vec<String>], refs: &[Vec<String>], variant: RougeVariant) -> f64 {
    let per: Vec<f64> = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| match variant {
            RougeVariant::One | RougeVariant::Two => {
                let n = if variant == RougeVariant::One { 1 } else { 2 };
                let hit = naive_clipped(h, r, n).iter().map(|x| x.1).sum();
                f1(hit, grams(h, n).len(), grams(r, n).len())
            }
            RougeVariant::L => f1(naive_lcs(h, r), h.len(), r.len()),
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

fn naive_ngram_table(hyps: &[Vec<String>], n: usize) -> Vec<(Vec<String>, usize)> {
    let all: Vec<Vec<String>> = hyps.iter().flat_map(|h| grams(h, n)).collect();
    let mut table: Vec<(Vec<String>, usize)> = Vec::new();
    for g in &all {
        if !table.iter().any(|(x, _)| x == g) {
            table.push((g.clone(), occurrences(&all, g)));
        }
    }
    table
}

fn naive_dist(hyps: &[Vec<String>], n: usize) -> f64 {
    let table = naive_ngram_table(hyps, n);
    let total: usize = table.iter().map(|x| x.1).sum();
    if total == 0 {
        0.0
    } else {
        table.len() as f64 / total as f64
    }
}

fn naive_ent(hyps: &[Vec<String>], n: usize) -> f64 {
    let table = naive_ngram_table(hyps, n);
    let total: usize = table.iter().map(|x| x.1).sum();
    table
        .iter()
        .map(|(_, c)| {
            let p = *c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn metric_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let vocab = ["a", "b", "c", "d", "e", "f", "g"];
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(1..9)).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
    };
    let mut worst = 0.0f64;
    let mut worst_name = "";
    let corpora = 500;
    for _ in 0..corpora {
        let refs: Vec<Vec<String>> = (0..5).map(|_| sentence(&mut rng)).collect();
        // half the hypotheses copy and perturb their reference so higher orders match
        let hyps: Vec<Vec<String>> = refs
            .iter()
            .map(|r| {
                if rng.gen_bool(0.5) {
                    let mut h = r.clone();
                    if rng.gen_bool(0.5) {
                        h.push(vocab[rng.gen_range(0..vocab.len())].to_string());
                    }
                    h
                } else {
                    sentence(&mut rng)
                }
            })
            .collect();
        let mut compare = |name: &'static str, got: f64, want: f64| {
            let diff = (got - want).abs();
            if diff > worst || diff.is_nan() {
                worst = if diff.is_nan() { f64::INFINITY } else { diff };
                worst_name = name;
            }
        };
        for n in 1..=4 {
            compare("BLEU", bleu(&hyps, &refs, n).unwrap(), naive_bleu(&hyps, &refs, n));
            compare("NIST", nist(&hyps, &refs, n).unwrap(), naive_nist(&hyps, &refs, n));
            compare("Dist", dist_n(&hyps, n), naive_dist(&hyps, n));
            compare("Ent", ent_n(&hyps, n), naive_ent(&hyps, n));
        }
        for v in [RougeVariant::One, RougeVariant::Two, RougeVariant::L] {
            compare("ROUGE", corpus_rouge(&hyps, &refs, v).unwrap().f1, naive_rouge_f1(&hyps, &refs, v));
        }
    }
    let ident: Vec<Vec<String>> = ["the cat sat on the mat", "a quick brown fox jumps", "we like long walks"]
        .iter()
        .map(|s| toks(s))
        .collect();
    let unique = vec![toks("one two three"), toks("four five six")];
    let identity_bleu = bleu(&ident, &ident, 4).unwrap();
    let identity_rouge = corpus_rouge(&ident, &ident, RougeVariant::L).unwrap().f1;
    let dist_unique = dist_n(&unique, 1);
    let prf = concept_prf(&[ConceptId(0), ConceptId(1)], &[ConceptId(1), ConceptId(2)]);
    let identities = (identity_bleu - 1.0).abs() <= 1e-12
        && (identity_rouge - 1.0).abs() <= 1e-12
        && (dist_unique - 1.0).abs() <= 1e-12
        && [prf.precision, prf.recall, prf.f1].iter().all(|v| (v - 0.5).abs() <= 1e-12);
    outcome(
        worst <= 1e-9 && identities,
        format!(
            "{corpora} random 5-sentence corpora, max deviation {worst:.1e}{}; identity BLEU-4 {identity_bleu}, \
             ROUGE-L {identity_rouge}, Dist-1 {dist_unique}, concept PRF ({}, {}, {})",
            if worst_name.is_empty() { String::new() } else { format!(" ({worst_name})") },
            prf.precision,
            prf.recall,
            prf.f1
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. determinism through the command line

fn cli(args: &[&str]) -> Result<(), String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut stdin: &[u8] = b"";
    let code = conceptflow::cli::run_with(
        std::iter::once("conceptflow").chain(args.iter().copied()),
        &mut stdin,
        &mut out,
        &mut err,
    );
    if code == 0 {
        Ok(())
    } else {
        Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)))
    }
}

fn pipeline(dir: &Path, workers: &str) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let conf = "tests/fixtures/toy.conf";
    let (pruned, ck, gen, rep) = (p("pruned.jsonl"), p("ck.bin"), p("gen.jsonl"), p("report.json"));
    cli(&["select", "--config", conf, "--pruned", &pruned])?;
    cli(&["train", "--config", conf, "--pruned", &pruned, "--checkpoint", &ck])?;
    cli(&[
        "generate",
        "--config",
        conf,
        "--pruned",
        &pruned,
        "--checkpoint",
        &ck,
        "--input",
        "tests/fixtures/conversations.jsonl",
        "--output",
        &gen,
        "--workers",
        workers,
        "--set",
        "trace=true",
    ])?;
    cli(&["evaluate", "--config", conf, "--pruned", &pruned, "--checkpoint", &ck, "--input", &gen, "--output", &rep, "--workers", workers])
}

fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::TempDir::new().unwrap()).collect();
    for (dir, workers) in dirs.iter().zip(["1", "4"]) {
        if let Err(e) = pipeline(dir.path(), workers) {
            return outcome(false, e);
        }
    }
    let mut differing = Vec::new();
    let mut bytes = 0;
    for name in ["pruned.jsonl", "ck.bin", "gen.jsonl", "report.json"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        bytes += a.len();
        if a != b || a.is_empty() {
            differing.push(name);
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "two select/train/generate/evaluate runs (1 and 4 workers), {bytes} bytes compared, differing: {differing:?}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_check),
        ("distribution invariants", distribution_invariants),
        ("graph construction oracle", graph_construction),
        ("hop coverage monotonicity", hop_coverage),
        ("overfit capability", overfit),
        ("selection effectiveness", selection),
        ("metric fidelity", metric_fidelity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} of {} acceptance criteria failed", criteria.len());
        std::process::exit(1);
    }
}
