//! LLM completion clients: an HTTP JSON endpoint and an offline fixture reader.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::dataset::PairSource;

pub const URL_ENV: &str = "PROTEXT_LLM_URL";
pub const KEY_ENV: &str = "PROTEXT_LLM_KEY";

#[derive(Clone, Debug)]
pub struct CompletionRequest<'a> {
    pub class_id: u32,
    pub query_id: u32,
    pub prompt: &'a str,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    /// Worth retrying: timeouts, connection resets, 429 and 5xx responses.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait LlmClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Vec<String>, LlmError>;

    /// Provenance tag recorded on every pair produced through this client.
    fn source(&self) -> PairSource;
}

/// Reads `<root>/<class_id>/<query_id>.txt`, one completion per line.
#[derive(Clone, Debug)]
pub struct FixtureClient {
    root: PathBuf,
}

impl FixtureClient {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_for(&self, class_id: u32, query_id: u32) -> PathBuf {
        self.root.join(class_id.to_string()).join(format!("{query_id}.txt"))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl LlmClient for FixtureClient {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>, LlmError> {
        let path = self.path_for(req.class_id, req.query_id);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| LlmError::Fatal(format!("fixture {} unavailable: {e}", path.display())))?;
        Ok(text.lines().take(req.n).map(String::from).collect())
    }

    fn source(&self) -> PairSource {
        PairSource::Fixture
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    prompt: &'a str,
    n: usize,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completions: Vec<String>,
}

/// POSTs `{"prompt", "n", "max_tokens", "temperature"}` and expects `{"completions": [...]}`.
#[derive(Clone, Debug)]
pub struct HttpClient {
    pub url: String,
    pub key: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout: Duration,
}

impl HttpClient {
    pub fn new(url: impl Into<String>, key: Option<String>) -> Self {
        Self { url: url.into(), key, max_tokens: 50, temperature: 0.99, timeout: Duration::from_secs(60) }
    }

    /// Endpoint and key from `PROTEXT_LLM_URL` / `PROTEXT_LLM_KEY`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(URL_ENV).ok().filter(|u| !u.is_empty())?;
        let key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        Some(Self::new(url, key))
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let mut call = agent.post(&self.url);
        if let Some(key) = &self.key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let body = CompletionBody { prompt: req.prompt, n: req.n, max_tokens: self.max_tokens, temperature: self.temperature };
        match call.send_json(&body) {
            Ok(resp) => {
                let parsed: CompletionResponse = resp
                    .into_body()
                    .read_json()
                    .map_err(|e| LlmError::Fatal(format!("malformed completion response: {e}")))?;
                Ok(parsed.completions)
            }
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(LlmError::Transient(format!("http status {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(LlmError::Fatal(format!("http status {code}"))),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed)) => {
                Err(LlmError::Transient(e.to_string()))
            }
            Err(e) => Err(LlmError::Fatal(e.to_string())),
        }
    }

    fn source(&self) -> PairSource {
        PairSource::Llm
    }
}

/// Exponential backoff: attempt `k` waits `base_delay * 2^k` before retrying.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 4, base_delay_ms: 500 }
    }
}

pub fn complete_with_retry(
    client: &dyn LlmClient,
    req: &CompletionRequest<'_>,
    policy: RetryPolicy,
) -> Result<Vec<String>, LlmError> {
    let mut attempt = 0;
    loop {
        match client.complete(req) {
            Err(LlmError::Transient(msg)) if attempt < policy.max_retries => {
                let wait = policy.base_delay_ms.saturating_mul(1 << attempt.min(20));
                log::warn!(
                    "class {} query {}: {msg}; retrying in {wait} ms ({}/{})",
                    req.class_id,
                    req.query_id,
                    attempt + 1,
                    policy.max_retries
                );
                std::thread::sleep(Duration::from_millis(wait));
                attempt += 1;
            }
            Err(LlmError::Transient(msg)) => {
                return Err(LlmError::Fatal(format!("gave up after {} retries: {msg}", policy.max_retries)))
            }
            other => return other,
        }
    }
}
