use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{normalize, EmbedError, Embedding, EmbeddingProvider};

/// Exponential backoff for transient failures (timeouts, connection errors,
/// HTTP 429 and 5xx).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Per-request timeout.
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
            timeout: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(16));
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

pub(crate) enum Attempt<T> {
    Done(T),
    Transient(String),
    Fatal(String),
}

/// Runs `f` until it succeeds, fails fatally, or exhausts the policy.
pub(crate) fn with_retries<T>(
    policy: &RetryPolicy,
    label: &str,
    retries: &AtomicU64,
    mut f: impl FnMut() -> Attempt<T>,
) -> Result<T, String> {
    let mut attempt = 0;
    loop {
        match f() {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(msg) => return Err(msg),
            Attempt::Transient(msg) if attempt < policy.max_retries => {
                let wait = policy.backoff(attempt);
                attempt += 1;
                retries.fetch_add(1, Ordering::SeqCst);
                log::warn!("{label}: {msg}; retry {attempt}/{} in {wait:?}", policy.max_retries);
                thread::sleep(wait);
            }
            Attempt::Transient(msg) => return Err(format!("{msg} (after {} retries)", policy.max_retries)),
        }
    }
}

pub(crate) fn post_json(client: &reqwest::blocking::Client, url: &str, body: &impl Serialize) -> Attempt<Value> {
    let resp = match client.post(url).json(body).send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => return Attempt::Transient(e.to_string()),
        Err(e) => return Attempt::Fatal(e.to_string()),
    };
    let status = resp.status();
    if status.is_server_error() || status.as_u16() == 429 {
        return Attempt::Transient(format!("HTTP {status}"));
    }
    if !status.is_success() {
        return Attempt::Fatal(format!("HTTP {status}"));
    }
    match resp.text() {
        Ok(text) => match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fatal(format!("invalid JSON body: {e}")),
        },
        Err(e) if e.is_timeout() => Attempt::Transient(e.to_string()),
        Err(e) => Attempt::Fatal(e.to_string()),
    }
}

/// Resolves `base` to a full endpoint URL ending in `/<route>`.
pub(crate) fn endpoint(base: &str, route: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(&format!("/{route}")) {
        base.to_string()
    } else {
        format!("{base}/{route}")
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for an encoder service speaking `POST /embed`.
///
/// Requests are batched, transient failures retried with backoff, and
/// responses L2-normalized. The first response fixes the embedding width.
pub struct HttpEmbeddingProvider {
    name: String,
    model: String,
    url: String,
    client: reqwest::blocking::Client,
    policy: RetryPolicy,
    batch_size: usize,
    dim: AtomicUsize,
    retries: AtomicU64,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint_url: &str, model: &str, policy: RetryPolicy) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(policy.timeout)
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(HttpEmbeddingProvider {
            name: model.to_string(),
            model: model.to_string(),
            url: endpoint(endpoint_url, "embed"),
            client,
            policy,
            batch_size: 64,
            dim: AtomicUsize::new(0),
            retries: AtomicU64::new(0),
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    /// Total retries performed so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::SeqCst)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let body = EmbedRequest {
            model: &self.model,
            texts,
        };
        let value = with_retries(&self.policy, &self.name, &self.retries, || {
            post_json(&self.client, &self.url, &body)
        })
        .map_err(|message| EmbedError::ProviderUnavailable {
            provider: self.name.clone(),
            message,
        })?;
        let resp: EmbedResponse =
            serde_json::from_value(value).map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        if resp.embeddings.len() != texts.len() {
            return Err(EmbedError::MalformedResponse(format!(
                "{} texts but {} embeddings",
                texts.len(),
                resp.embeddings.len()
            )));
        }
        let mut out = Vec::with_capacity(texts.len());
        for mut v in resp.embeddings {
            let expected = match self
                .dim
                .compare_exchange(0, v.len(), Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => v.len(),
                Err(d) => d,
            };
            if v.is_empty() || v.len() != expected {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    found: v.len(),
                });
            }
            normalize(&mut v);
            out.push(v);
        }
        Ok(out)
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }
}

/// Builds an HTTP-backed provider with an explicit request timeout.
pub fn make_http_provider(
    endpoint_url: &str,
    model: &str,
    timeout: Duration,
    mut policy: RetryPolicy,
) -> Result<HttpEmbeddingProvider, EmbedError> {
    policy.timeout = timeout;
    HttpEmbeddingProvider::new(endpoint_url, model, policy)
}
