//! Completion backends: HTTP, scripted transcripts, and a shared rate limiter.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StructureError;
use crate::embed::{endpoint, post_json, with_retries, RetryPolicy};

pub const ENV_LLM_URL: &str = "LUNGUAGE_LLM_URL";
pub const ENV_LLM_MODEL: &str = "LUNGUAGE_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    /// Greedy decoding.
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 4096,
        }
    }
}

pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, system: &str, user: &str, params: &DecodingParams) -> Result<String, StructureError>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, system: &str, user: &str, params: &DecodingParams) -> Result<String, StructureError> {
        (**self).complete(system, user, params)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, system: &str, user: &str, params: &DecodingParams) -> Result<String, StructureError> {
        (**self).complete(system, user, params)
    }
}

/// Key of a prompt pair in a transcript: hex SHA-256 of
/// `system`, a NUL byte, and `user`.
pub fn prompt_hash(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    hex::encode(h.finalize())
}

enum Script {
    Table(HashMap<String, String>),
    Queue(Mutex<VecDeque<String>>),
}

/// Replays canned responses.
///
/// A transcript file is a JSON object mapping [`prompt_hash`] keys to
/// response strings. Queue mode ignores the prompt and pops responses in
/// order.
pub struct ScriptedProvider {
    name: String,
    script: Script,
    calls: AtomicU64,
}

impl ScriptedProvider {
    pub fn from_table(table: HashMap<String, String>) -> Self {
        ScriptedProvider {
            name: "scripted".into(),
            script: Script::Table(table),
            calls: AtomicU64::new(0),
        }
    }

    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedProvider {
            name: "scripted-queue".into(),
            script: Script::Queue(Mutex::new(responses.into_iter().map(Into::into).collect())),
            calls: AtomicU64::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, StructureError> {
        let text = std::fs::read_to_string(path).map_err(|e| StructureError::Transcript {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let table: HashMap<String, String> = serde_json::from_str(&text).map_err(|e| StructureError::Transcript {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::from_table(table))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl CompletionProvider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, system: &str, user: &str, _params: &DecodingParams) -> Result<String, StructureError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let found = match &self.script {
            Script::Table(t) => t.get(&prompt_hash(system, user)).cloned(),
            Script::Queue(q) => q.lock().expect("queue lock").pop_front(),
        };
        found.ok_or_else(|| StructureError::ProviderUnavailable {
            provider: self.name.clone(),
            message: format!("no scripted response for prompt {}", prompt_hash(system, user)),
        })
    }
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    system: &'a str,
    user: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

/// Client for a completion service speaking `POST /complete`.
pub struct HttpCompletionProvider {
    client: reqwest::blocking::Client,
    url: String,
    model: Option<String>,
    name: String,
    policy: RetryPolicy,
    retries: AtomicU64,
}

impl HttpCompletionProvider {
    pub fn new(base_url: &str, model: Option<String>, policy: RetryPolicy) -> Result<Self, StructureError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(policy.timeout)
            .build()
            .map_err(|e| StructureError::ProviderUnavailable {
                provider: base_url.to_string(),
                message: e.to_string(),
            })?;
        let name = match &model {
            Some(m) => format!("http:{m}"),
            None => "http".into(),
        };
        Ok(HttpCompletionProvider {
            client,
            url: endpoint(base_url, "complete"),
            model,
            name,
            policy,
            retries: AtomicU64::new(0),
        })
    }

    /// Reads the completion environment variables; `None` without a URL.
    pub fn from_env(policy: RetryPolicy) -> Option<Result<Self, StructureError>> {
        let url = std::env::var(ENV_LLM_URL).ok().filter(|u| !u.is_empty())?;
        let model = std::env::var(ENV_LLM_MODEL).ok().filter(|m| !m.is_empty());
        Some(Self::new(&url, model, policy))
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl CompletionProvider for HttpCompletionProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, system: &str, user: &str, params: &DecodingParams) -> Result<String, StructureError> {
        let body = CompleteRequest {
            system,
            user,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            model: self.model.as_deref(),
        };
        let unavailable = |message: String| StructureError::ProviderUnavailable {
            provider: self.name.clone(),
            message,
        };
        let value = with_retries(&self.policy, &self.name, &self.retries, || {
            post_json(&self.client, &self.url, &body)
        })
        .map_err(unavailable)?;
        let resp: CompleteResponse =
            serde_json::from_value(value).map_err(|e| unavailable(format!("malformed completion response: {e}")))?;
        Ok(resp.text)
    }
}

/// Token bucket shared by concurrent callers.
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    /// `per_second` sustained requests with bursts up to `burst`.
    pub fn new(per_second: f64, burst: u32) -> Self {
        assert!(per_second > 0.0 && burst > 0, "rate and burst must be positive");
        let capacity = f64::from(burst);
        RateLimiter {
            capacity,
            per_second,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a token is available and takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("limiter lock");
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Wraps a provider so every call first takes a token from a shared limiter.
pub struct RateLimited<P> {
    inner: P,
    limiter: Arc<RateLimiter>,
}

impl<P> RateLimited<P> {
    pub fn new(inner: P, limiter: Arc<RateLimiter>) -> Self {
        RateLimited { inner, limiter }
    }
}

impl<P: CompletionProvider> CompletionProvider for RateLimited<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, system: &str, user: &str, params: &DecodingParams) -> Result<String, StructureError> {
        self.limiter.acquire();
        self.inner.complete(system, user, params)
    }
}
