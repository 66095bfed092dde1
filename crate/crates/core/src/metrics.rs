//! Automatic response metrics over whitespace-tokenized corpora.
//!
//! Counts live in ordered maps so every floating-point sum runs in a fixed
//! order and reports are reproducible to the bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::knowledge::ConceptId;

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

fn num_ngrams(tokens: &[String], n: usize) -> usize {
    (tokens.len() + 1).saturating_sub(n)
}

fn check_corpora(hyps: &[Vec<String>], refs: &[Vec<String>], n: usize) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Domain("corpus is empty".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Domain(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if !(1..=4).contains(&n) {
        return Err(Error::Domain(format!("n-gram order must be in 1..=4, got {n}")));
    }
    Ok(())
}

/// Clipped matches of order `n` between one hypothesis and its reference.
fn clipped<'a>(hyp: &'a [String], reference: &'a [String], n: usize) -> Vec<(&'a [String], usize)> {
    let r = ngram_counts(reference, n);
    ngram_counts(hyp, n)
        .into_iter()
        .filter_map(|(g, c)| r.get(g).map(|rc| (g, c.min(*rc))))
        .collect()
}

/// Corpus BLEU: geometric mean of clipped precisions of orders `1..=n` times
/// the brevity penalty. Any zero precision gives 0.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>], n: usize) -> Result<f64> {
    check_corpora(hyps, refs, n)?;
    let mut log_sum = 0.0;
    for k in 1..=n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (h, r) in hyps.iter().zip(refs) {
            matched += clipped(h, r, k).iter().map(|(_, c)| c).sum::<usize>();
            total += num_ngrams(h, k);
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / n as f64).exp())
}

/// Corpus NIST with information weights estimated from the references.
///
/// `info(w₁..w_k) = log₂(count(w₁..w_{k−1}) / count(w₁..w_k))`, where the
/// empty prefix counts every reference word. The brevity factor is
/// `exp(β·ln²(min(L_hyp / L_ref, 1)))` with `β` chosen so a ratio of 2/3
/// scores one half.
pub fn nist(hyps: &[Vec<String>], refs: &[Vec<String>], n: usize) -> Result<f64> {
    check_corpora(hyps, refs, n)?;
    let mut ref_counts: Vec<Counts> = vec![BTreeMap::new(); n + 1];
    for r in refs {
        for (k, counts) in ref_counts.iter_mut().enumerate().skip(1) {
            for (g, c) in ngram_counts(r, k) {
                *counts.entry(g).or_insert(0) += c;
            }
        }
    }
    let ref_words: usize = refs.iter().map(Vec::len).sum();
    let info = |g: &[String]| -> f64 {
        let k = g.len();
        let count = ref_counts[k][g] as f64;
        let prefix = if k == 1 {
            ref_words as f64
        } else {
            ref_counts[k - 1][&g[..k - 1]] as f64
        };
        (prefix / count).log2()
    };
    let mut score = 0.0;
    for k in 1..=n {
        let mut gained = 0.0;
        let mut total = 0usize;
        for (h, r) in hyps.iter().zip(refs) {
            for (g, c) in clipped(h, r, k) {
                gained += c as f64 * info(g);
            }
            total += num_ngrams(h, k);
        }
        if total > 0 {
            score += gained / total as f64;
        }
    }
    let sys_words: usize = hyps.iter().map(Vec::len).sum();
    let ratio = if ref_words == 0 { 1.0 } else { (sys_words as f64 / ref_words as f64).min(1.0) };
    let beta = 0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2);
    let bp = if ratio <= 0.0 { 0.0 } else { (beta * ratio.ln().powi(2)).exp() };
    Ok(score * bp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_counts(hit: usize, predicted: usize, actual: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self::from_pr(ratio(hit, predicted), ratio(hit, actual))
    }

    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    fn mean(items: &[Prf]) -> Prf {
        let n = items.len().max(1) as f64;
        Prf {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Sentence-level ROUGE. An empty hypothesis scores zero.
pub fn rouge(hyp: &[String], reference: &[String], variant: RougeVariant) -> Result<Prf> {
    if reference.is_empty() {
        return Err(Error::Domain("reference is empty".into()));
    }
    if hyp.is_empty() {
        return Ok(Prf::ZERO);
    }
    Ok(match variant {
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let hit = clipped(hyp, reference, n).iter().map(|(_, c)| c).sum();
            Prf::from_counts(hit, num_ngrams(hyp, n), num_ngrams(reference, n))
        }
        RougeVariant::L => Prf::from_counts(lcs_len(hyp, reference), hyp.len(), reference.len()),
    })
}

/// Mean sentence-level ROUGE over a corpus.
pub fn corpus_rouge(hyps: &[Vec<String>], refs: &[Vec<String>], variant: RougeVariant) -> Result<Prf> {
    check_corpora(hyps, refs, 1)?;
    let items = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| rouge(h, r, variant))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prf::mean(&items))
}

fn corpus_ngrams(hyps: &[Vec<String>], n: usize) -> Counts<'_> {
    let mut counts = BTreeMap::new();
    for h in hyps {
        for (g, c) in ngram_counts(h, n) {
            *counts.entry(g).or_insert(0) += c;
        }
    }
    counts
}

/// Distinct n-grams over total n-grams across the corpus; 0 without n-grams.
pub fn dist_n(hyps: &[Vec<String>], n: usize) -> f64 {
    let counts = corpus_ngrams(hyps, n);
    let total: usize = counts.values().sum();
    if total == 0 {
        0.0
    } else {
        counts.len() as f64 / total as f64
    }
}

/// Natural-log entropy of the corpus n-gram frequencies; 0 without n-grams.
pub fn ent_n(hyps: &[Vec<String>], n: usize) -> f64 {
    let counts = corpus_ngrams(hyps, n);
    let total: usize = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Set overlap of generated and golden concepts.
///
/// Both empty scores (1, 1, 1); an empty golden set with generated concepts
/// scores (0, 1, 0); nothing generated against a nonempty golden set scores
/// (0, 0, 0).
pub fn concept_prf(generated: &[ConceptId], golden: &[ConceptId]) -> Prf {
    let gen: BTreeSet<ConceptId> = generated.iter().copied().collect();
    let gold: BTreeSet<ConceptId> = golden.iter().copied().collect();
    match (gen.is_empty(), gold.is_empty()) {
        (true, true) => Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        },
        (false, true) => Prf {
            precision: 0.0,
            recall: 1.0,
            f1: 0.0,
        },
        _ => Prf::from_counts(gen.intersection(&gold).count(), gen.len(), gold.len()),
    }
}

pub fn mean_concept_prf(generated: &[Vec<ConceptId>], golden: &[Vec<ConceptId>]) -> Prf {
    let items: Vec<Prf> = generated.iter().zip(golden).map(|(g, r)| concept_prf(g, r)).collect();
    Prf::mean(&items)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub examples: usize,
    pub hypothesis_tokens: usize,
    pub reference_tokens: usize,
    pub metrics: Vec<Metric>,
    /// Present with perplexity: values depend on the tokenization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    /// Adds perplexity and the tokenization caveat.
    pub fn with_perplexity(mut self, ppl: f64) -> Self {
        self.metrics.push(Metric {
            name: "PPL".into(),
            value: ppl,
        });
        self.note = Some("perplexity is only comparable between runs sharing a tokenization".into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_table(&self) -> String {
        let width = self.metrics.iter().map(|m| m.name.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}", "metric", "value");
        let _ = writeln!(out, "{}  {}", "-".repeat(width), "-".repeat(10));
        for m in &self.metrics {
            let _ = writeln!(out, "{:<width$}  {:>10.4}", m.name, m.value);
        }
        let _ = writeln!(
            out,
            "\n{} examples, {} generated tokens, {} reference tokens",
            self.examples, self.hypothesis_tokens, self.reference_tokens
        );
        if let Some(note) = &self.note {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }
}

/// The full metric table for aligned corpora. Concept lists, when given,
/// add concept precision, recall and F1.
pub fn evaluate(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    concepts: Option<(&[Vec<ConceptId>], &[Vec<ConceptId>])>,
) -> Result<EvalReport> {
    check_corpora(hyps, refs, 1)?;
    let mut metrics = Vec::new();
    let mut push = |name: &str, value: f64| {
        metrics.push(Metric {
            name: name.into(),
            value,
        })
    };
    push("BLEU-4", bleu(hyps, refs, 4)?);
    push("NIST-2", nist(hyps, refs, 2)?);
    push("NIST-4", nist(hyps, refs, 4)?);
    push("ROUGE-1", corpus_rouge(hyps, refs, RougeVariant::One)?.f1);
    push("ROUGE-2", corpus_rouge(hyps, refs, RougeVariant::Two)?.f1);
    push("ROUGE-L", corpus_rouge(hyps, refs, RougeVariant::L)?.f1);
    push("Dist-1", dist_n(hyps, 1));
    push("Dist-2", dist_n(hyps, 2));
    push("Ent-4", ent_n(hyps, 4));
    if let Some((generated, golden)) = concepts {
        if generated.len() != golden.len() {
            return Err(Error::Domain("concept lists are not aligned".into()));
        }
        let prf = mean_concept_prf(generated, golden);
        push("Concept-P", prf.precision);
        push("Concept-R", prf.recall);
        push("Concept-F1", prf.f1);
    }
    if let Some(m) = metrics.iter().find(|m| !m.value.is_finite()) {
        return Err(Error::Numeric(format!("{} is not finite", m.name)));
    }
    Ok(EvalReport {
        examples: hyps.len(),
        hypothesis_tokens: hyps.iter().map(Vec::len).sum(),
        reference_tokens: refs.iter().map(Vec::len).sum(),
        metrics,
        note: None,
    })
}
