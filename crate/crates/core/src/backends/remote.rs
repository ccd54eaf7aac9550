//! HTTP client for a model server speaking the generate/score protocol.
//!
//! `POST /v1/generate` `{prompt, top_p, max_tokens, stop, seed}` returns
//! `{text, logprob, token_count, truncated}`; `POST /v1/score`
//! `{prompt, continuation}` returns `{logprob, token_count}`. A `null`
//! logprob stands for negative infinity.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::Url;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::StQuery;

use super::{Capabilities, Generation, GenerationConfig, GeneratorBackend, ScoredText};

/// Log-probabilities above this are rejected as protocol violations.
const LOGPROB_SLACK: f64 = 1e-6;

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    top_p: f64,
    max_tokens: usize,
    stop: &'a str,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateResponse {
    text: String,
    logprob: Option<f64>,
    token_count: usize,
    truncated: bool,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreResponse {
    logprob: Option<f64>,
    token_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_name: String,
    pub vocab_size: u64,
}

#[derive(Clone, Debug)]
pub struct RemoteBackend {
    base: Url,
    client: Client,
    retries: u32,
    initial_backoff: Duration,
}

/// Connects lazily; the endpoint is only validated syntactically here.
/// `retries` counts additional attempts after the first one.
pub fn remote_backend(endpoint: &str, timeout: Duration, retries: u32) -> Result<RemoteBackend> {
    let mut base = Url::parse(endpoint).map_err(|e| Error::invalid(format!("bad endpoint {endpoint:?}: {e}")))?;
    if !matches!(base.scheme(), "http" | "https") || base.cannot_be_a_base() {
        return Err(Error::invalid(format!(
            "endpoint {endpoint:?} is not an http(s) base url"
        )));
    }
    if !base.path().ends_with('/') {
        let path = format!("{}/", base.path());
        base.set_path(&path);
    }
    let client = Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Transport(e.to_string()))?;
    Ok(RemoteBackend {
        base,
        client,
        retries,
        initial_backoff: Duration::from_millis(200),
    })
}

impl RemoteBackend {
    /// Delay before the first retry; doubles on each further retry.
    pub fn with_backoff(mut self, initial: Duration) -> Self {
        self.initial_backoff = initial;
        self
    }

    pub fn endpoint(&self) -> &str {
        self.base.as_str()
    }

    pub fn health(&self) -> Result<HealthResponse> {
        self.call("v1/health", None)
    }

    fn call<T: DeserializeOwned>(&self, path: &str, body: Option<String>) -> Result<T> {
        let url = self.base.join(path).map_err(|e| Error::invalid(e.to_string()))?;
        let mut delay = self.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&url, body.as_deref()) {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("bad response from {url}: {e}")));
                }
                Err(err @ (Error::Transport(_) | Error::Server { .. })) if attempt < self.retries => {
                    log::warn!(target: "remote", "attempt {} on {url} failed: {err}; retrying", attempt + 1);
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn attempt(&self, url: &Url, body: Option<&str>) -> Result<String> {
        let request = match body {
            Some(body) => self
                .client
                .post(url.clone())
                .header("content-type", "application/json")
                .body(body.to_string()),
            None => self.client.get(url.clone()),
        };
        let response = request.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Error::Transport(e.to_string()))?;
        if status.is_server_error() {
            return Err(Error::Server {
                status: status.as_u16(),
                body: text,
            });
        }
        if !status.is_success() {
            return Err(Error::Protocol(format!("HTTP {}: {text}", status.as_u16())));
        }
        Ok(text)
    }
}

fn checked_logprob(logprob: Option<f64>) -> Result<f64> {
    match logprob {
        None => Ok(f64::NEG_INFINITY),
        Some(lp) if lp.is_nan() || lp > LOGPROB_SLACK => {
            Err(Error::Protocol(format!("logprob {lp} is not a log-probability")))
        }
        Some(lp) => Ok(lp.min(0.0)),
    }
}

impl GeneratorBackend for RemoteBackend {
    fn name(&self) -> String {
        format!("remote({})", self.base)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_generate: true,
            can_score: true,
        }
    }

    fn generate(&self, query: &StQuery, config: &GenerationConfig, stream: u64) -> Result<Generation> {
        config.validate()?;
        let body = serde_json::to_string(&GenerateRequest {
            prompt: &query.surface,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
            stop: &config.end_symbol,
            seed: config.derived_seed(stream),
        })?;
        let response: GenerateResponse = self.call("v1/generate", Some(body))?;
        let logprob = checked_logprob(response.logprob)?;
        if response.text.trim().is_empty() {
            return Err(Error::GenerationFailure {
                prefix: String::new(),
                reason: "server returned an empty continuation".into(),
            });
        }
        Ok(Generation {
            scored: ScoredText {
                text: response.text,
                logprob,
                token_count: response.token_count,
            },
            truncated: response.truncated,
        })
    }

    fn score(&self, prompt: &str, continuation: &str) -> Result<ScoredText> {
        let body = serde_json::to_string(&ScoreRequest { prompt, continuation })?;
        let response: ScoreResponse = self.call("v1/score", Some(body))?;
        Ok(ScoredText {
            text: continuation.to_string(),
            logprob: checked_logprob(response.logprob)?,
            token_count: response.token_count,
        })
    }
}
