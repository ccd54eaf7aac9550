use crate::error::{Error, Result};
use crate::query::StQuery;
use crate::text::tokenize;

use super::nucleus::{nucleus_candidates, sample_candidates};
use super::{Generation, GenerationConfig, ScoredText};

/// An autoregressive model exposing its next-token distribution.
pub trait NextTokenModel: Sync {
    /// Full distribution over the vocabulary given the token history.
    /// Probabilities sum to one; an empty vector means the model has nothing
    /// to offer for this context.
    fn next_distribution(&self, history: &[String]) -> Vec<(String, f64)>;
}

pub fn decode<M: NextTokenModel + ?Sized>(
    model: &M,
    query: &StQuery,
    config: &GenerationConfig,
    stream: u64,
) -> Result<Generation> {
    decode_prompt(model, &query.surface, config, stream)
}

/// Samples a continuation of `prompt` token by token with nucleus sampling.
///
/// Stops when the end symbol is drawn or after `max_tokens` draws. The
/// returned log-probability sums the drawn tokens (end symbol included) under
/// the truncated, renormalized distributions actually sampled from.
pub fn decode_prompt<M: NextTokenModel + ?Sized>(
    model: &M,
    prompt: &str,
    config: &GenerationConfig,
    stream: u64,
) -> Result<Generation> {
    config.validate()?;
    let mut rng = config.rng(stream);
    let mut history = tokenize(prompt);
    let prompt_len = history.len();
    let mut logprob = 0.0;
    let mut finished = false;

    for _ in 0..config.max_tokens {
        let dist = model.next_distribution(&history);
        if dist.is_empty() {
            return Err(Error::GenerationFailure {
                prefix: history[prompt_len..].join(" "),
                reason: "model returned an empty distribution".into(),
            });
        }
        let candidates = nucleus_candidates(&dist, config.top_p).map_err(|e| Error::GenerationFailure {
            prefix: history[prompt_len..].join(" "),
            reason: e.to_string(),
        })?;
        let (token, p) = sample_candidates(&candidates, &mut rng);
        logprob += p.ln();
        if token == config.end_symbol {
            finished = true;
            break;
        }
        history.push(token);
    }

    let answer = &history[prompt_len..];
    if answer.is_empty() {
        return Err(Error::GenerationFailure {
            prefix: String::new(),
            reason: "end symbol drawn before any token".into(),
        });
    }
    Ok(Generation {
        scored: ScoredText {
            text: answer.join(" "),
            logprob,
            token_count: answer.len(),
        },
        truncated: !finished,
    })
}

/// Forced-decoding log-probability of `continuation` under the untruncated
/// model distributions. A token with zero mass yields `-inf`.
pub fn score_prompt<M: NextTokenModel + ?Sized>(model: &M, prompt: &str, continuation: &str) -> Result<ScoredText> {
    let tokens = tokenize(continuation);
    if tokens.is_empty() {
        return Err(Error::invalid("continuation is empty"));
    }
    let mut history = tokenize(prompt);
    let mut logprob = 0.0;
    for token in &tokens {
        let dist = model.next_distribution(&history);
        let p = dist.iter().find(|(t, _)| t == token).map(|(_, p)| *p).unwrap_or(0.0);
        if p <= 0.0 {
            logprob = f64::NEG_INFINITY;
            break;
        }
        logprob += p.ln();
        history.push(token.clone());
    }
    Ok(ScoredText {
        text: tokens.join(" "),
        logprob,
        token_count: tokens.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Puts all mass on the next answer token (then the end symbol).
    struct Forced {
        prompt_len: usize,
        answer: Vec<String>,
    }

    impl NextTokenModel for Forced {
        fn next_distribution(&self, history: &[String]) -> Vec<(String, f64)> {
            let i = history.len() - self.prompt_len;
            let token = self.answer.get(i).cloned().unwrap_or_else(|| "</s>".into());
            let other = if token == "zzz" { "yyy" } else { "zzz" };
            vec![(token, 1.0), (other.to_string(), 0.0)]
        }
    }

    struct Uniform(Vec<String>);

    impl NextTokenModel for Uniform {
        fn next_distribution(&self, _: &[String]) -> Vec<(String, f64)> {
            let p = 1.0 / self.0.len() as f64;
            self.0.iter().map(|t| (t.clone(), p)).collect()
        }
    }

    struct Silent;

    impl NextTokenModel for Silent {
        fn next_distribution(&self, _: &[String]) -> Vec<(String, f64)> {
            Vec::new()
        }
    }

    fn forced(prompt: &str, answer: &str) -> Forced {
        Forced {
            prompt_len: tokenize(prompt).len(),
            answer: tokenize(answer),
        }
    }

    #[test]
    fn one_hot_chain_reproduces_answer() {
        let model = forced("what does it help ? </q>", "stronger wind");
        let config = GenerationConfig::default();
        let out = decode_prompt(&model, "what does it help ? </q>", &config, 0).unwrap();
        assert_eq!(out.scored.text, "stronger wind");
        assert_eq!(out.scored.logprob, 0.0);
        assert_eq!(out.scored.token_count, 2);
        assert!(!out.truncated);

        let s = score_prompt(&model, "what does it help ? </q>", "stronger wind").unwrap();
        assert_eq!(s.logprob, 0.0);
        let miss = score_prompt(&model, "what does it help ? </q>", "calm sea").unwrap();
        assert!(miss.is_impossible());
    }

    #[test]
    fn max_tokens_truncates() {
        let model = forced("q", "a b c");
        let config = GenerationConfig {
            max_tokens: 1,
            ..Default::default()
        };
        let out = decode_prompt(&model, "q", &config, 0).unwrap();
        assert_eq!(out.scored.text, "a");
        assert!(out.truncated);
    }

    #[test]
    fn uniform_score_closed_form() {
        let vocab: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let model = Uniform(vocab);
        let s = score_prompt(&model, "x", "a b c").unwrap();
        approx::assert_abs_diff_eq!(s.logprob, 3.0 * (1.0f64 / 5.0).ln(), epsilon = 1e-12);
        assert!(score_prompt(&model, "x", "a q").unwrap().is_impossible());
        assert!(score_prompt(&model, "x", "  ").is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let vocab: Vec<String> = ["a", "b", "c", "</s>"].iter().map(|s| s.to_string()).collect();
        let model = Uniform(vocab);
        let config = GenerationConfig {
            top_p: 1.0,
            max_tokens: 30,
            ..Default::default()
        };
        for stream in 0..10 {
            let x = decode_prompt(&model, "go", &config, stream);
            let y = decode_prompt(&model, "go", &config, stream);
            match (x, y) {
                (Ok(x), Ok(y)) => assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                _ => panic!("nondeterministic decode"),
            }
        }
    }

    #[test]
    fn empty_distribution_fails_with_prefix() {
        let err = decode_prompt(&Silent, "q", &GenerationConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::GenerationFailure { .. }));
    }
}
