//! Oracle interface: the boundary between elicitation and whatever answers
//! the prompts — a remote chat-completion endpoint, a deterministic
//! synthetic model, or a scripted replay.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One token of a completion with its log-probability (natural log).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub text: String,
    pub logprob: f64,
}

/// One oracle call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
}

/// Raw completion text plus optional per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReply {
    pub text: String,
    pub tokens: Option<Vec<TokenLogProb>>,
}

impl OracleReply {
    pub fn text_only(text: impl Into<String>) -> Self {
        OracleReply {
            text: text.into(),
            tokens: None,
        }
    }
}

/// Why a single call failed.
#[derive(Debug, Clone)]
pub enum OracleFailure {
    /// Transient: worth retrying (timeouts, 5xx, rate limits).
    Transport(String),
    /// Permanent: retrying cannot help (bad config, auth, missing script).
    Fatal(String),
}

impl std::fmt::Display for OracleFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleFailure::Transport(m) => write!(f, "transport: {m}"),
            OracleFailure::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

/// Anything that can answer a rendered prompt.
///
/// Implementations must be shareable across threads; the elicitation loop
/// issues calls concurrently up to the configured bound.
pub trait Oracle: Send + Sync {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure>;
    fn name(&self) -> &str;
}

impl<O: Oracle + ?Sized> Oracle for std::sync::Arc<O> {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        (**self).complete(req)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Attempts per call before giving up on transport failures.
pub const RETRY_ATTEMPTS: usize = 3;
/// Base backoff; doubles per attempt.
pub const RETRY_BASE_MS: u64 = 200;

/// Outcome of one call after retries: a reply, an invalid-completion marker
/// (transport exhausted), or a fatal run-aborting error.
pub fn complete_with_retry(
    oracle: &dyn Oracle,
    req: &OracleRequest,
) -> Result<std::result::Result<OracleReply, String>> {
    let mut last = String::new();
    for attempt in 0..RETRY_ATTEMPTS {
        match oracle.complete(req) {
            Ok(reply) => return Ok(Ok(reply)),
            Err(OracleFailure::Fatal(m)) => {
                return Err(Error::Oracle(format!("{}: {m}", oracle.name())))
            }
            Err(OracleFailure::Transport(m)) => {
                last = m;
                if attempt + 1 < RETRY_ATTEMPTS {
                    std::thread::sleep(Duration::from_millis(RETRY_BASE_MS << attempt));
                }
            }
        }
    }
    Ok(Err(format!("transport failure after {RETRY_ATTEMPTS} attempts: {last}")))
}

/// Configuration for the remote chat-completion oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpOracleConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Request per-token log-probabilities.
    #[serde(default = "default_true")]
    pub logprobs: bool,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_true() -> bool {
    true
}
fn default_max_tokens() -> u32 {
    512
}

/// Remote chat-completion oracle speaking the common JSON API shape with
/// optional per-token log-probabilities.
pub struct HttpOracle {
    config: HttpOracleConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            Error::Config(format!(
                "api key environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpOracle {
            config,
            api_key,
            client,
        })
    }

    /// Request body for one call; exposed for offline testing.
    pub fn request_body(config: &HttpOracleConfig, req: &OracleRequest) -> serde_json::Value {
        serde_json::json!({
            "model": config.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "seed": req.seed,
            "max_tokens": config.max_tokens,
            "logprobs": config.logprobs,
        })
    }

    /// Extract text and token log-probabilities from a response body;
    /// exposed for offline testing against canned responses.
    pub fn parse_response(body: &serde_json::Value) -> std::result::Result<OracleReply, String> {
        let choice = body
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or("response has no choices")?;
        let text = choice
            .pointer("/message/content")
            .and_then(|v| v.as_str())
            .ok_or("choice has no message content")?
            .to_string();
        let tokens = choice
            .pointer("/logprobs/content")
            .and_then(|v| v.as_array())
            .map(|arr| {
                arr.iter()
                    .filter_map(|t| {
                        Some(TokenLogProb {
                            text: t.get("token")?.as_str()?.to_string(),
                            logprob: t.get("logprob")?.as_f64()?,
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .filter(|v: &Vec<TokenLogProb>| !v.is_empty());
        Ok(OracleReply { text, tokens })
    }
}

impl Oracle for HttpOracle {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        let body = Self::request_body(&self.config, req);
        let resp = self
            .client
            .post(&self.config.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| OracleFailure::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| OracleFailure::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(OracleFailure::Transport(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(OracleFailure::Fatal(format!("status {status}: {text}")));
        }
        let parsed: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| OracleFailure::Transport(format!("response not JSON: {e}")))?;
        Self::parse_response(&parsed).map_err(OracleFailure::Fatal)
    }

    fn name(&self) -> &str {
        "http"
    }
}

/// Wraps an oracle and appends every request/reply pair to a JSONL file,
/// ready to be replayed by the scripted oracle.
pub struct RecordingOracle<O> {
    inner: O,
    sink: Mutex<std::fs::File>,
    path: PathBuf,
}

/// One recorded exchange.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedCall {
    pub request: OracleRequest,
    pub reply: OracleReply,
}

impl<O: Oracle> RecordingOracle<O> {
    pub fn create(inner: O, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let sink = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)?;
        Ok(RecordingOracle {
            inner,
            sink: Mutex::new(sink),
            path,
        })
    }

    pub fn path(&self) -> &std::path::Path {
        &self.path
    }
}

impl<O: Oracle> Oracle for RecordingOracle<O> {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        let reply = self.inner.complete(req)?;
        let record = RecordedCall {
            request: req.clone(),
            reply: reply.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| OracleFailure::Fatal(format!("record serialization: {e}")))?;
        {
            let mut sink = self
                .sink
                .lock()
                .map_err(|_| OracleFailure::Fatal("record sink poisoned".into()))?;
            writeln!(sink, "{line}").map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        }
        Ok(reply)
    }

    fn name(&self) -> &str {
        "recording"
    }
}
