//! Chat-completion providers: the HTTP client, deterministic scripted mocks,
//! cassette recording and replay, retries and rate limiting.
//!
//! Every model call in the crate goes through a [`Provider`]. Requests carry
//! the model name and temperature so that their digest identifies them
//! independently of which provider serves them.

pub mod cassette;
pub mod config;
pub mod http;
pub mod mock;

use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cassette::{Cassette, CassetteRecord, Recorder, Replay};
pub use config::{GatewayConfig, ProviderKind, ProviderSpec, Providers, RoleName, RoutingRule};
pub use http::{HttpEmbedder, OpenAiProvider, Transport, UreqTransport};
pub use mock::{Reply, Rule, ScriptedMock};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("provider refused or returned no content{}", if .0.is_empty() { String::new() } else { format!(": {}", .0) })]
    Refusal(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("config: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

impl GatewayError {
    pub fn is_refusal(&self) -> bool {
        matches!(self, GatewayError::Refusal(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::Invalid("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Invalid(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if let Some(i) = self
            .messages
            .iter()
            .position(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return Err(GatewayError::Invalid(format!("message {i} is empty")));
        }
        Ok(())
    }

    /// Hex SHA-256 over model, temperature and messages.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            model: &'a str,
            temperature: f64,
            messages: &'a [ChatMessage],
        }
        let key = serde_json::to_vec(&Key {
            model: &self.model,
            temperature: self.temperature,
            messages: &self.messages,
        })
        .expect("request serializes");
        hex::encode(Sha256::digest(&key))
    }

    /// Text of the last user message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

/// What a model call is for; selects the default temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Extraction,
    Simulation,
    Completion,
}

impl Purpose {
    pub fn default_temperature(self) -> f64 {
        match self {
            Purpose::Extraction | Purpose::Completion => 0.0,
            Purpose::Simulation => 0.7,
        }
    }
}

/// A provider bound to a model and sampling settings.
#[derive(Clone)]
pub struct Llm {
    pub provider_id: String,
    pub provider: Arc<dyn Provider>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl std::fmt::Debug for Llm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Llm")
            .field("provider_id", &self.provider_id)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .finish()
    }
}

impl Llm {
    pub fn new(provider_id: impl Into<String>, provider: Arc<dyn Provider>, model: impl Into<String>, purpose: Purpose) -> Self {
        Llm {
            provider_id: provider_id.into(),
            provider,
            model: model.into(),
            temperature: purpose.default_temperature(),
            max_tokens: 512,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            messages,
        }
    }

    /// Sends the messages; blank replies surface as [`GatewayError::Refusal`].
    pub fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, GatewayError> {
        let req = self.request(messages);
        req.validate()?;
        let text = self.provider.complete(&req)?;
        if text.trim().is_empty() {
            return Err(GatewayError::Refusal(String::new()));
        }
        Ok(text.trim().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n` (1-based, n ≥ 2): base · 2^(n−2).
    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1 << attempt.saturating_sub(2).min(16)))
    }
}

/// Token bucket refilled continuously at `per_minute` requests per minute.
pub struct RateLimiter {
    per_minute: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        let burst = per_minute.max(1) as f64;
        RateLimiter {
            per_minute: burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    fn refill(&self, state: &mut (f64, Instant)) {
        let now = Instant::now();
        let gained = now.duration_since(state.1).as_secs_f64() * self.per_minute / 60.0;
        state.0 = (state.0 + gained).min(self.per_minute);
        state.1 = now;
    }

    /// Takes a token if one is available.
    pub fn try_acquire(&self) -> bool {
        let mut s = self.state.lock();
        self.refill(&mut s);
        if s.0 >= 1.0 {
            s.0 -= 1.0;
            true
        } else {
            false
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock();
                self.refill(&mut s);
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) * 60.0 / self.per_minute
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

pub struct RateLimited<P> {
    inner: P,
    limiter: RateLimiter,
}

impl<P: Provider> RateLimited<P> {
    pub fn new(inner: P, per_minute: u32) -> Self {
        RateLimited {
            inner,
            limiter: RateLimiter::new(per_minute),
        }
    }
}

impl<P: Provider> Provider for RateLimited<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.limiter.acquire();
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            max_tokens: 10,
            messages: vec![ChatMessage::user(text)],
        }
    }

    #[test]
    fn digest_depends_on_model_temperature_and_messages() {
        let a = req("hi");
        assert_eq!(a.digest(), req("hi").digest());
        assert_ne!(a.digest(), req("hi!").digest());
        let mut b = a.clone();
        b.temperature = 0.7;
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.model = "other".into();
        assert_ne!(a.digest(), c.digest());
        let mut d = a.clone();
        d.max_tokens = 99;
        assert_eq!(a.digest(), d.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn request_validation() {
        assert!(req("x").validate().is_ok());
        assert!(req(" ").validate().is_err());
        let mut r = req("x");
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        r.messages.clear();
        r.temperature = 0.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn empty_reply_is_refusal() {
        let llm = Llm::new("mock", Arc::new(ScriptedMock::new(vec![], "  ")), "m", Purpose::Completion);
        assert!(llm.complete(vec![ChatMessage::user("x")]).unwrap_err().is_refusal());
    }

    #[test]
    fn purpose_temperatures() {
        assert_eq!(Purpose::Extraction.default_temperature(), 0.0);
        assert_eq!(Purpose::Simulation.default_temperature(), 0.7);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_attempts: 5,
            backoff_ms: 100,
        };
        assert_eq!(p.delay(2), Duration::from_millis(100));
        assert_eq!(p.delay(3), Duration::from_millis(200));
        assert_eq!(p.delay(4), Duration::from_millis(400));
    }

    #[test]
    fn token_bucket_limits_burst() {
        let l = RateLimiter::new(3);
        assert!(l.try_acquire() && l.try_acquire() && l.try_acquire());
        assert!(!l.try_acquire());
    }
}
