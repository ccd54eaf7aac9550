//! Overlap metrics over flattened graphs and the two-hop consistency check.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{GenerationConfig, GeneratorBackend};
use crate::error::{Error, Result};
use crate::graph::{EffectType, Polarity, Relation, StGraph};
use crate::graphgen::{ExpansionPolicy, GraphGenerator};
use crate::query::build_query;
use crate::text::{normalize, tokenize};

/// Precision used for n-gram levels with no clipped matches.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;
pub const DEFAULT_F1_THRESHOLD: f64 = 0.8;

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Clipped matches and hypothesis n-gram totals per order, summed over the corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn precision(&self, order: usize) -> Option<f64> {
        let (m, t) = (self.matches[order - 1], self.totals[order - 1]);
        if t == 0 {
            None
        } else if m == 0 {
            Some(BLEU_EPSILON / t as f64)
        } else {
            Some(m as f64 / t as f64)
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        }
    }

    /// BLEU up to `max_n`, scaled to [0, 100]. Orders for which the corpus
    /// has no hypothesis n-grams at all are left out of the geometric mean.
    pub fn score(&self, max_n: usize) -> f64 {
        let logs: Vec<f64> = (1..=max_n.min(self.totals.len()))
            .filter_map(|n| self.precision(n))
            .map(f64::ln)
            .collect();
        if logs.is_empty() {
            return 0.0;
        }
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        100.0 * self.brevity_penalty() * mean.exp()
    }
}

pub fn bleu_stats<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[Vec<H>],
    references: &[Vec<R>],
    max_n: usize,
) -> Result<BleuStats> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::invalid("bleu needs at least one pair"));
    }
    if max_n == 0 {
        return Err(Error::invalid("max_n must be at least 1"));
    }
    let mut stats = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        hyp_len: 0,
        ref_len: 0,
    };
    for (hyp, reference) in hypotheses.iter().zip(references) {
        stats.hyp_len += hyp.len();
        stats.ref_len += reference.len();
        for n in 1..=max_n {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            stats.totals[n - 1] += h.values().sum::<usize>();
            stats.matches[n - 1] += h
                .iter()
                .map(|(gram, &c)| c.min(r.get(gram).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    Ok(stats)
}

/// Corpus-level BLEU with clipping, epsilon smoothing and brevity penalty.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[Vec<H>], references: &[Vec<R>], max_n: usize) -> Result<f64> {
    Ok(bleu_stats(hypotheses, references, max_n)?.score(max_n))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: PartialEq>(hypothesis: &[T], reference: &[T], beta: f64) -> Result<RougeL> {
    if hypothesis.is_empty() || reference.is_empty() {
        return Err(Error::invalid("rouge_l needs non-empty sequences"));
    }
    let lcs = lcs_len(hypothesis, reference);
    if lcs == 0 {
        return Ok(RougeL {
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        });
    }
    let precision = lcs as f64 / hypothesis.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    Ok(RougeL {
        precision,
        recall,
        f: (1.0 + b2) * precision * recall / (recall + b2 * precision),
    })
}

/// Harmonic mean of bag-of-token precision and recall.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokenize(&normalize(a)), tokenize(&normalize(b)));
    if ta.is_empty() || tb.is_empty() {
        return if ta.is_empty() && tb.is_empty() { 1.0 } else { 0.0 };
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in &tb {
        *bag.entry(t).or_insert(0) += 1;
    }
    let mut common = 0;
    for t in &ta {
        if let Some(c) = bag.get_mut(t.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / ta.len() as f64;
    let r = common as f64 / tb.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub bleu: f64,
    pub rouge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    /// Corpus BLEU-1 through BLEU-4.
    pub bleu_by_order: [f64; 4],
    pub rouge_l_f: f64,
    pub n_pairs: usize,
    pub per_pair: Vec<PairScore>,
}

/// Compares generated graphs with references by flattening both sides.
pub fn eval_graphs(generated: &[StGraph], references: &[StGraph]) -> Result<EvalReport> {
    if generated.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} generated graphs but {} references",
            generated.len(),
            references.len()
        )));
    }
    if generated.is_empty() {
        return Err(Error::invalid("no graphs to evaluate"));
    }
    for (i, (g, r)) in generated.iter().zip(references).enumerate() {
        if normalize(g.context()) != normalize(r.context()) || normalize(g.situation()) != normalize(r.situation()) {
            return Err(Error::invalid(format!(
                "pair {i}: context or situation differs from its reference"
            )));
        }
    }
    let hyps: Vec<Vec<String>> = generated.par_iter().map(|g| tokenize(&g.flatten())).collect();
    let refs: Vec<Vec<String>> = references.par_iter().map(|g| tokenize(&g.flatten())).collect();
    let per_pair = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| {
            Ok(PairScore {
                bleu: bleu(std::slice::from_ref(h), std::slice::from_ref(r), 4)?,
                rouge: 100.0 * rouge_l(h, r, ROUGE_BETA)?.f,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = bleu_stats(&hyps, &refs, 4)?;
    let rouge_l_f = per_pair.iter().map(|p| p.rouge).sum::<f64>() / per_pair.len() as f64;
    Ok(EvalReport {
        bleu: stats.score(4),
        bleu_by_order: [1, 2, 3, 4].map(|n| stats.score(n)),
        rouge_l_f,
        n_pairs: per_pair.len(),
        per_pair,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    Exact,
    TokenF1 { threshold: f64 },
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::TokenF1 {
            threshold: DEFAULT_F1_THRESHOLD,
        }
    }
}

impl Criterion {
    pub fn matches(&self, answer: &str, expected: &str) -> bool {
        match *self {
            Criterion::Exact => normalize(answer) == normalize(expected),
            Criterion::TokenF1 { threshold } => token_f1(answer, expected) >= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCheck {
    pub case: usize,
    pub first: String,
    pub middle: String,
    pub last: String,
    /// Answer to the direct eventual query; `None` when it failed.
    pub direct: Option<String>,
    pub exact: bool,
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub n_paths: usize,
    pub n_consistent: usize,
    pub n_exact: usize,
    /// `None` when no case produced a two-hop path.
    pub rate: Option<f64>,
    pub criterion: Criterion,
    pub paths: Vec<PathCheck>,
}

/// Expands each case into a chain graph and, for every `A -> B -> C` path
/// whose edges are both positive, asks what `A` helps eventually and compares
/// the answer with `C`.
pub fn consistency_rate<B: GeneratorBackend + ?Sized>(
    backend: &B,
    cases: &[(String, String)],
    policy: &ExpansionPolicy,
    criterion: Criterion,
    config: &GenerationConfig,
) -> Result<ConsistencyReport> {
    GraphGenerator::new(backend, config)?;
    let per_case = cases
        .par_iter()
        .enumerate()
        .map(|(case, (context, situation))| check_case(backend, case, context, situation, policy, criterion, config))
        .collect::<Result<Vec<_>>>()?;
    let paths: Vec<PathCheck> = per_case.into_iter().flatten().collect();
    let n_consistent = paths.iter().filter(|p| p.consistent).count();
    let n_exact = paths.iter().filter(|p| p.exact).count();
    Ok(ConsistencyReport {
        n_paths: paths.len(),
        n_consistent,
        n_exact,
        rate: (!paths.is_empty()).then(|| n_consistent as f64 / paths.len() as f64),
        criterion,
        paths,
    })
}

fn check_case<B: GeneratorBackend + ?Sized>(
    backend: &B,
    case: usize,
    context: &str,
    situation: &str,
    policy: &ExpansionPolicy,
    criterion: Criterion,
    config: &GenerationConfig,
) -> Result<Vec<PathCheck>> {
    let mut generator = GraphGenerator::new(backend, config)?.with_stream_base((case as u64) << 32);
    let graph = StGraph::new(context, situation)?;
    let root = graph.root().expect("fresh graph has a root");
    let graph = generator.expand(graph, &[root], policy)?.graph;
    let text = |id| graph.node(id).expect("path nodes exist").text.clone();
    let mut checks = Vec::new();
    for path in graph.paths_of_length_two() {
        if path.first_relation.polarity() != Polarity::Positive || path.second_relation.polarity() != Polarity::Positive
        {
            continue;
        }
        let (first, middle, last) = (text(path.first), text(path.middle), text(path.last));
        let query = build_query(
            context,
            &first,
            Relation::Helps,
            EffectType::Eventual,
            generator.template(),
        )?;
        let stream = generator.take_stream();
        let direct = backend.generate(&query, config, stream).ok().map(|g| g.scored.text);
        let (exact, consistent) = match &direct {
            Some(answer) => (
                Criterion::Exact.matches(answer, &last),
                criterion.matches(answer, &last),
            ),
            None => (false, false),
        };
        checks.push(PathCheck {
            case,
            first,
            middle,
            last,
            direct,
            exact,
            consistent,
        });
    }
    Ok(checks)
}
