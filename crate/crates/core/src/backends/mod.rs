//! Text generation backends.
//!
//! [`GeneratorBackend`] is the seam between graph construction and whatever
//! produces text: a lookup-table oracle, the local n-gram model, or a remote
//! model server. Randomness is never hidden inside a backend; each call gets
//! a stream index and derives its generator from `(seed, stream)` through
//! [`GenerationConfig::rng`].

mod decode;
mod ngram;
mod nucleus;
mod oracle;
mod remote;

pub use decode::{decode, decode_prompt, score_prompt, NextTokenModel};
pub use ngram::{train_ngram, NGramModel, TrainStats, NGRAM_FORMAT_VERSION};
pub use nucleus::{nucleus_candidates, nucleus_sample, sample_candidates};
pub use oracle::{oracle_backend, OracleBackend, OracleEntry, OracleTable, PromptEntry};
pub use remote::{remote_backend, HealthResponse, RemoteBackend};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::StQuery;

pub const END_SYMBOL: &str = "</s>";
pub const DEFAULT_BACKOFF: f64 = 0.4;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub can_generate: bool,
    pub can_score: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub top_p: f64,
    pub max_tokens: usize,
    pub end_symbol: String,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            top_p: 0.9,
            max_tokens: 24,
            end_symbol: END_SYMBOL.to_string(),
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn new(top_p: f64, max_tokens: usize, seed: u64) -> Result<Self> {
        let config = GenerationConfig {
            top_p,
            max_tokens,
            seed,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }

    /// A nucleus so small it always holds exactly the most likely token.
    pub fn greedy(max_tokens: usize) -> Self {
        GenerationConfig {
            top_p: f64::MIN_POSITIVE,
            max_tokens,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be at least 1"));
        }
        if self.end_symbol.trim().is_empty() {
            return Err(Error::invalid("end symbol is empty"));
        }
        Ok(())
    }

    /// Generator for one query: ChaCha8 keyed by the master seed, with the
    /// stream index selecting an independent ChaCha stream.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Scalar seed for backends that take a single integer (the wire
    /// protocol). SplitMix64 finalizer over seed and stream.
    pub fn derived_seed(&self, stream: u64) -> u64 {
        let mut z = self
            .seed
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// A phrase with its summed natural-log probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub text: String,
    /// `f64::NEG_INFINITY` when the model assigns the text zero mass.
    pub logprob: f64,
    pub token_count: usize,
}

impl ScoredText {
    pub fn is_impossible(&self) -> bool {
        self.logprob == f64::NEG_INFINITY
    }

    pub fn per_token_logprob(&self) -> f64 {
        if self.token_count == 0 {
            self.logprob
        } else {
            self.logprob / self.token_count as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub scored: ScoredText,
    /// Stopped by `max_tokens` rather than the end symbol.
    pub truncated: bool,
}

pub trait GeneratorBackend: Send + Sync {
    fn name(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    fn generate(&self, _query: &StQuery, _config: &GenerationConfig, _stream: u64) -> Result<Generation> {
        Err(Error::Unsupported("generate"))
    }

    /// Log-probability of `continuation` given `prompt` under the full model
    /// distribution. No length normalization.
    fn score(&self, _prompt: &str, _continuation: &str) -> Result<ScoredText> {
        Err(Error::Unsupported("score"))
    }
}

impl<B: GeneratorBackend + ?Sized> GeneratorBackend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn generate(&self, query: &StQuery, config: &GenerationConfig, stream: u64) -> Result<Generation> {
        (**self).generate(query, config, stream)
    }
    fn score(&self, prompt: &str, continuation: &str) -> Result<ScoredText> {
        (**self).score(prompt, continuation)
    }
}
