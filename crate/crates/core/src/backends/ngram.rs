//! Count-based n-gram language model with stupid backoff.
//!
//! The model is a desk-scale stand-in for a fine-tuned transformer: it is
//! trained on `query ++ answer ++ </s>` token sequences and decodes with the
//! same nucleus sampler any other backend would use.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::StQuery;
use crate::text::tokenize;

use super::decode::{decode, score_prompt, NextTokenModel};
use super::{Capabilities, Generation, GenerationConfig, GeneratorBackend, ScoredText, END_SYMBOL};

pub const NGRAM_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
struct Continuations {
    total: u64,
    next: BTreeMap<u32, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    backoff_factor: f64,
    end_symbol: String,
    /// Sorted, so id order is lexicographic token order.
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    /// `tables[k]` maps a k-token context to its continuation counts.
    tables: Vec<HashMap<Vec<u32>, Continuations>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub retained: usize,
    pub filtered_empty: usize,
}

/// Trains an order-`order` model on `(query surface, answer)` pairs. Pairs
/// whose answer tokenizes to nothing are dropped and counted.
pub fn train_ngram<I, Q, A>(pairs: I, order: usize, backoff_factor: f64) -> Result<(NGramModel, TrainStats)>
where
    I: IntoIterator<Item = (Q, A)>,
    Q: AsRef<str>,
    A: AsRef<str>,
{
    if order < 1 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    if !(backoff_factor > 0.0 && backoff_factor < 1.0) {
        return Err(Error::invalid(format!(
            "backoff factor must lie in (0, 1), got {backoff_factor}"
        )));
    }
    let mut stats = TrainStats::default();
    let mut sequences = Vec::new();
    for (query, answer) in pairs {
        let answer = tokenize(answer.as_ref());
        if answer.is_empty() {
            stats.filtered_empty += 1;
            continue;
        }
        let mut seq = tokenize(query.as_ref());
        seq.extend(answer);
        seq.push(END_SYMBOL.to_string());
        sequences.push(seq);
        stats.retained += 1;
    }
    if sequences.is_empty() {
        return Err(Error::invalid("no training pairs with a non-empty answer"));
    }

    let mut vocab: Vec<String> = sequences.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let ids: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

    let mut tables: Vec<HashMap<Vec<u32>, Continuations>> = vec![HashMap::new(); order];
    for seq in &sequences {
        let encoded: Vec<u32> = seq.iter().map(|t| ids[t]).collect();
        for i in 0..encoded.len() {
            for k in 0..=i.min(order - 1) {
                let entry = tables[k].entry(encoded[i - k..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(encoded[i]).or_default() += 1;
            }
        }
    }

    let model = NGramModel {
        order,
        backoff_factor,
        end_symbol: END_SYMBOL.to_string(),
        vocab,
        ids,
        tables,
    };
    Ok((model, stats))
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn backoff_factor(&self) -> f64 {
        self.backoff_factor
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn end_symbol(&self) -> &str {
        &self.end_symbol
    }

    /// Every stored context, as tokens.
    pub fn contexts(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.tables
            .iter()
            .flat_map(|t| t.keys())
            .map(|ctx| ctx.iter().map(|&i| self.vocab[i as usize].clone()).collect())
    }

    /// Stupid-backoff scores for every vocabulary id, normalized to sum to
    /// one. The longest matching context supplies relative frequencies; each
    /// level backed off multiplies by the backoff factor; tokens never seen at
    /// any level fall to a uniform floor.
    fn probabilities(&self, history: &[String]) -> Vec<f64> {
        let vocab_size = self.vocab.len();
        let mut scores: Vec<Option<f64>> = vec![None; vocab_size];
        let longest = history.len().min(self.order - 1);
        let mut weight = 1.0;
        for k in (0..=longest).rev() {
            let context: Option<Vec<u32>> = history[history.len() - k..]
                .iter()
                .map(|t| self.ids.get(t).copied())
                .collect();
            if let Some(found) = context.and_then(|c| self.tables[k].get(&c)) {
                for (&token, &count) in &found.next {
                    let slot = &mut scores[token as usize];
                    if slot.is_none() {
                        *slot = Some(weight * count as f64 / found.total as f64);
                    }
                }
            }
            weight *= self.backoff_factor;
        }
        let floor = weight / vocab_size as f64;
        let raw: Vec<f64> = scores.into_iter().map(|s| s.unwrap_or(floor)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|s| s / total).collect()
    }

    pub fn to_json(&self) -> String {
        let mut tables = Vec::with_capacity(self.tables.len());
        for table in &self.tables {
            let mut rows: Vec<ContextRow> = table
                .iter()
                .map(|(context, c)| ContextRow {
                    context: context.clone(),
                    next: c.next.iter().map(|(&t, &n)| (t, n)).collect(),
                })
                .collect();
            rows.sort_by(|a, b| a.context.cmp(&b.context));
            tables.push(rows);
        }
        let file = ModelFile {
            header: ModelHeader {
                backoff_factor: self.backoff_factor,
                end_symbol: self.end_symbol.clone(),
                format_version: NGRAM_FORMAT_VERSION,
                n: self.order,
                vocab_size: self.vocab.len(),
            },
            tables,
            vocab: self.vocab.clone(),
        };
        let mut text = serde_json::to_string(&file).expect("model serialization is infallible");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let header = file.header;
        if header.format_version != NGRAM_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported n-gram format version {}",
                header.format_version
            )));
        }
        if header.n < 1 || file.tables.len() != header.n {
            return Err(Error::invalid("n-gram table count does not match order"));
        }
        if header.vocab_size != file.vocab.len() || file.vocab.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("vocabulary is not sorted or does not match vocab_size"));
        }
        let vocab_size = file.vocab.len() as u32;
        let mut tables = Vec::with_capacity(header.n);
        for (k, rows) in file.tables.into_iter().enumerate() {
            let mut table = HashMap::new();
            for row in rows {
                if row.context.len() != k || row.context.iter().any(|&t| t >= vocab_size) {
                    return Err(Error::invalid(format!("malformed context at level {k}")));
                }
                let mut c = Continuations::default();
                for (token, count) in row.next {
                    if token >= vocab_size || count == 0 {
                        return Err(Error::invalid("malformed continuation count"));
                    }
                    c.total += count;
                    c.next.insert(token, count);
                }
                if c.total == 0 {
                    return Err(Error::invalid("context without continuations"));
                }
                table.insert(row.context, c);
            }
            tables.push(table);
        }
        let ids = file
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(NGramModel {
            order: header.n,
            backoff_factor: header.backoff_factor,
            end_symbol: header.end_symbol,
            vocab: file.vocab,
            ids,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl NextTokenModel for NGramModel {
    fn next_distribution(&self, history: &[String]) -> Vec<(String, f64)> {
        self.vocab.iter().cloned().zip(self.probabilities(history)).collect()
    }
}

impl GeneratorBackend for NGramModel {
    fn name(&self) -> String {
        format!("ngram(n={})", self.order)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_generate: true,
            can_score: true,
        }
    }

    fn generate(&self, query: &StQuery, config: &GenerationConfig, stream: u64) -> Result<Generation> {
        let config = GenerationConfig {
            end_symbol: self.end_symbol.clone(),
            ..config.clone()
        };
        decode(self, query, &config, stream)
    }

    fn score(&self, prompt: &str, continuation: &str) -> Result<ScoredText> {
        score_prompt(self, prompt, continuation)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    backoff_factor: f64,
    end_symbol: String,
    format_version: u32,
    n: usize,
    vocab_size: usize,
}

#[derive(Serialize, Deserialize)]
struct ContextRow {
    context: Vec<u32>,
    next: Vec<(u32, u64)>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    header: ModelHeader,
    tables: Vec<Vec<ContextRow>>,
    vocab: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use crate::graph::{EffectType, Relation};
    use crate::query::{build_query, QueryTemplate};

    fn prob(model: &NGramModel, history: &[&str], token: &str) -> f64 {
        let history: Vec<String> = history.iter().map(|s| s.to_string()).collect();
        model
            .next_distribution(&history)
            .into_iter()
            .find(|(t, _)| t == token)
            .unwrap()
            .1
    }

    #[test]
    fn rejects_order_zero() {
        assert!(train_ngram([("a", "b")], 0, 0.4).is_err());
        assert!(train_ngram([("a", "b")], 2, 1.0).is_err());
    }

    #[test]
    fn filters_empty_answers() {
        let (_, stats) = train_ngram([("q one", "a"), ("q two", "  "), ("q three", "")], 2, 0.4).unwrap();
        assert_eq!(
            stats,
            TrainStats {
                retained: 1,
                filtered_empty: 2
            }
        );
        assert!(train_ngram([("q", "")], 2, 0.4).is_err());
    }

    /// Bigram model on the single sequence `a b </s>` (empty query, answer
    /// "a b"). Counts by hand:
    ///   unigram: a=1, b=1, </s>=1 (total 3)
    ///   after a: b=1 (total 1); after b: </s>=1 (total 1)
    /// Stupid backoff with factor 0.4, then normalization over {</s>, a, b}:
    ///   P(b|a):   b=1, a=0.4/3, </s>=0.4/3 -> 1 / (1 + 0.8/3) = 3/3.8
    ///   P(</s>|b): same shape -> 3/3.8
    /// score(prompt "a", "b </s>") = 2 ln(3/3.8).
    #[test]
    fn bigram_score_matches_hand_counts() {
        let (model, _) = train_ngram([("", "a b")], 2, 0.4).unwrap();
        assert_eq!(model.vocab(), &["</s>", "a", "b"]);
        assert_abs_diff_eq!(prob(&model, &["a"], "b"), 3.0 / 3.8, epsilon = 1e-12);
        let s = model.score("a", "b </s>").unwrap();
        assert_abs_diff_eq!(s.logprob, 2.0 * (3.0f64 / 3.8).ln(), epsilon = 1e-12);
    }

    #[test]
    fn unigram_prefers_most_frequent_token() {
        let (model, _) = train_ngram([("x", "wind wind wind"), ("y", "wind rain")], 1, 0.4).unwrap();
        for history in [vec![], vec!["x"], vec!["rain", "y"]] {
            let history: Vec<String> = history.into_iter().map(String::from).collect();
            let dist = model.next_distribution(&history);
            let best = dist.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            assert_eq!(best.0, "wind");
        }
    }

    #[test]
    fn single_pair_is_reproduced_greedily() {
        let query = build_query(
            "wind creates waves",
            "there is a storm",
            Relation::Helps,
            EffectType::Imminent,
            QueryTemplate::Question,
        )
        .unwrap();
        let (model, _) = train_ngram([(query.surface.as_str(), "stronger gusts")], 2, 0.4).unwrap();
        let out = model.generate(&query, &GenerationConfig::greedy(10), 0).unwrap();
        assert_eq!(out.scored.text, "stronger gusts");
        assert!(!out.truncated);
    }

    #[test]
    fn oov_scores_negative_infinity() {
        let (model, _) = train_ngram([("q", "a b")], 2, 0.4).unwrap();
        assert!(model.score("q", "a zebra").unwrap().is_impossible());
    }

    #[test]
    fn json_round_trip() {
        let (model, _) = train_ngram([("q one", "a b"), ("q two", "b c a")], 3, 0.4).unwrap();
        let text = model.to_json();
        assert!(text.contains("\"format_version\":1"));
        let back = NGramModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json(), text);
        assert!(NGramModel::from_json(&text.replace("\"format_version\":1", "\"format_version\":7")).is_err());
    }

    fn corpus() -> impl Strategy<Value = Vec<(String, String)>> {
        let word = prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g"]);
        let phrase = prop::collection::vec(word, 1..6).prop_map(|w| w.join(" "));
        prop::collection::vec((phrase.clone(), phrase), 1..8)
    }

    proptest! {
        #[test]
        fn stored_contexts_sum_to_one(pairs in corpus(), order in 1usize..5) {
            let (model, _) = train_ngram(pairs, order, 0.4).unwrap();
            for context in model.contexts() {
                let total: f64 = model.next_distribution(&context).iter().map(|(_, p)| p).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn appending_never_raises_score(pairs in corpus(), order in 1usize..4, extra in 0usize..7) {
            let (model, _) = train_ngram(pairs.clone(), order, 0.4).unwrap();
            let (prompt, answer) = &pairs[0];
            let base = model.score(prompt, answer).unwrap();
            let longer = format!("{answer} {}", model.vocab()[extra % model.vocab().len()]);
            let extended = model.score(prompt, &longer).unwrap();
            prop_assert!(base.logprob <= 0.0);
            prop_assert!(extended.logprob <= base.logprob);
        }
    }
}
