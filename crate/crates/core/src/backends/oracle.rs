use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EffectType, Relation};
use crate::query::{build_query, QueryTemplate, StQuery};
use crate::text::{collapse_whitespace, normalize, tokenize};

use super::{Capabilities, Generation, GenerationConfig, GeneratorBackend, ScoredText};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub answer: String,
    pub context: String,
    pub effect: EffectType,
    pub relation: Relation,
    pub situation: String,
}

/// A raw prompt mapped to its answer, for scoring prompts that are not
/// query tuples (zero-shot items).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub answer: String,
    pub prompt: String,
}

/// On-disk form of an oracle lookup table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleTable {
    pub default: Option<String>,
    pub entries: Vec<OracleEntry>,
    #[serde(default)]
    pub prompts: Vec<PromptEntry>,
}

impl OracleTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("table serialization is infallible");
        text.push('\n');
        text
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Key {
    context: String,
    situation: String,
    relation: Relation,
    effect: EffectType,
}

impl Key {
    fn new(context: &str, situation: &str, relation: Relation, effect: EffectType) -> Self {
        Key {
            context: normalize(context),
            situation: normalize(situation),
            relation,
            effect,
        }
    }
}

/// Deterministic lookup-table backend. Generation returns the mapped answer
/// with log-probability 0; scoring returns 0 for the mapped answer and `-inf`
/// for anything else.
#[derive(Clone, Debug, Default)]
pub struct OracleBackend {
    answers: HashMap<Key, String>,
    prompts: HashMap<String, String>,
    default: Option<String>,
}

pub fn oracle_backend(table: &OracleTable) -> OracleBackend {
    let mut oracle = OracleBackend::new();
    for e in &table.entries {
        oracle.insert(&e.context, &e.situation, e.relation, e.effect, &e.answer);
    }
    for p in &table.prompts {
        oracle.insert_prompt(&p.prompt, &p.answer);
    }
    oracle.default = table.default.clone();
    oracle
}

impl OracleBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, answer: impl Into<String>) -> Self {
        self.default = Some(answer.into());
        self
    }

    /// Maps a query tuple to `answer`. The first mapping for a tuple wins;
    /// returns false when the tuple was already mapped.
    pub fn insert(
        &mut self,
        context: &str,
        situation: &str,
        relation: Relation,
        effect: EffectType,
        answer: &str,
    ) -> bool {
        let key = Key::new(context, situation, relation, effect);
        if self.answers.contains_key(&key) {
            return false;
        }
        for template in [QueryTemplate::Question, QueryTemplate::Concat] {
            if let Ok(q) = build_query(context, situation, relation, effect, template) {
                self.prompts.entry(q.surface).or_insert_with(|| answer.to_string());
            }
        }
        self.answers.insert(key, answer.to_string());
        true
    }

    pub fn insert_prompt(&mut self, prompt: &str, answer: &str) {
        self.prompts.insert(collapse_whitespace(prompt), answer.to_string());
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty() && self.prompts.is_empty()
    }

    fn lookup_query(&self, query: &StQuery) -> Option<&String> {
        self.answers
            .get(&Key::new(
                &query.context,
                &query.situation,
                query.relation,
                query.effect,
            ))
            .or_else(|| self.prompts.get(&collapse_whitespace(&query.surface)))
            .or(self.default.as_ref())
    }

    fn lookup_prompt(&self, prompt: &str) -> Option<&String> {
        self.prompts.get(&collapse_whitespace(prompt)).or(self.default.as_ref())
    }
}

impl GeneratorBackend for OracleBackend {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_generate: true,
            can_score: true,
        }
    }

    fn generate(&self, query: &StQuery, _config: &GenerationConfig, _stream: u64) -> Result<Generation> {
        let answer = self.lookup_query(query).ok_or_else(|| Error::GenerationFailure {
            prefix: String::new(),
            reason: format!("oracle has no answer for {:?}", query.surface),
        })?;
        Ok(Generation {
            scored: ScoredText {
                text: answer.clone(),
                logprob: 0.0,
                token_count: tokenize(answer).len(),
            },
            truncated: false,
        })
    }

    fn score(&self, prompt: &str, continuation: &str) -> Result<ScoredText> {
        let answer = self.lookup_prompt(prompt).ok_or_else(|| Error::GenerationFailure {
            prefix: String::new(),
            reason: format!("oracle has no answer for {prompt:?}"),
        })?;
        let logprob = if normalize(answer) == normalize(continuation) {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        Ok(ScoredText {
            text: continuation.to_string(),
            logprob,
            token_count: tokenize(continuation).len(),
        })
    }
}
