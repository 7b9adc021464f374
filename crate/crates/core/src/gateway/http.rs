//! OpenAI-compatible chat and embedding endpoints over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, GatewayError, Provider, RetryPolicy};
use crate::metrics::text::Embedder;
use crate::metrics::MetricsError;

/// Minimal POST abstraction so retry behaviour can be tested without a server.
/// Returns the status code and body, or an error for connection failures.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<(u16, String), String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        UreqTransport {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<(u16, String), String> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(key) = bearer {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

fn api_key(env_var: Option<&str>) -> Result<Option<String>, GatewayError> {
    match env_var {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| GatewayError::Config(format!("environment variable {name} is not set"))),
    }
}

/// Posts with retries on connection errors, 408, 429 and 5xx.
fn post_with_retry(
    transport: &dyn Transport,
    retry: &RetryPolicy,
    url: &str,
    key: Option<&str>,
    body: &str,
) -> Result<String, GatewayError> {
    let attempts = retry.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(retry.delay(attempt));
        }
        match transport.post_json(url, key, body) {
            Ok((200..=299, text)) => return Ok(text),
            Ok((status, text)) if retryable(status) => last = format!("HTTP {status}: {text}"),
            Ok((status, text)) => return Err(GatewayError::Transport(format!("HTTP {status}: {text}"))),
            Err(e) => last = e,
        }
        log::warn!("{url}: attempt {attempt}/{attempts} failed: {last}");
    }
    Err(GatewayError::Transport(format!(
        "gave up after {attempts} attempts: {last}"
    )))
}

pub struct OpenAiProvider<T = UreqTransport> {
    pub endpoint: String,
    pub api_key_env: Option<String>,
    pub retry: RetryPolicy,
    transport: T,
}

impl OpenAiProvider<UreqTransport> {
    pub fn new(endpoint: impl Into<String>, api_key_env: Option<String>, retry: RetryPolicy) -> Self {
        Self::with_transport(endpoint, api_key_env, retry, UreqTransport::new(Duration::from_secs(120)))
    }
}

impl<T: Transport> OpenAiProvider<T> {
    pub fn with_transport(
        endpoint: impl Into<String>,
        api_key_env: Option<String>,
        retry: RetryPolicy,
        transport: T,
    ) -> Self {
        OpenAiProvider {
            endpoint: endpoint.into(),
            api_key_env,
            retry,
            transport,
        }
    }
}

impl<T: Transport> Provider for OpenAiProvider<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let key = api_key(self.api_key_env.as_deref())?;
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": request.messages,
        })
        .to_string();
        let text = post_with_retry(&self.transport, &self.retry, &self.endpoint, key.as_deref(), &body)?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Transport(format!("bad response JSON: {e}")))?;
        let choice = &v["choices"][0];
        if choice["finish_reason"] == "content_filter" {
            return Err(GatewayError::Refusal("content filter".into()));
        }
        if let Some(refusal) = choice["message"]["refusal"].as_str() {
            return Err(GatewayError::Refusal(refusal.to_string()));
        }
        match choice["message"]["content"].as_str() {
            Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
            _ => Err(GatewayError::Refusal(String::new())),
        }
    }
}

/// Sentence embeddings from an OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder<T = UreqTransport> {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub retry: RetryPolicy,
    transport: T,
}

impl HttpEmbedder<UreqTransport> {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: Option<String>) -> Self {
        HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env,
            retry: RetryPolicy::default(),
            transport: UreqTransport::new(Duration::from_secs(60)),
        }
    }
}

impl<T: Transport> HttpEmbedder<T> {
    pub fn with_transport(endpoint: impl Into<String>, model: impl Into<String>, transport: T) -> Self {
        HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            retry: RetryPolicy::default(),
            transport,
        }
    }
}

impl<T: Transport> Embedder for HttpEmbedder<T> {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        let err = |e: GatewayError| MetricsError::Embedding(e.to_string());
        let key = api_key(self.api_key_env.as_deref()).map_err(err)?;
        let body = json!({ "model": self.model, "input": text }).to_string();
        let resp = post_with_retry(&self.transport, &self.retry, &self.endpoint, key.as_deref(), &body)
            .map_err(err)?;
        let v: Value = serde_json::from_str(&resp).map_err(|e| MetricsError::Embedding(e.to_string()))?;
        v["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| MetricsError::Embedding("response has no embedding".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;
    use parking_lot::Mutex;

    struct Canned {
        replies: Mutex<Vec<Result<(u16, String), String>>>,
        calls: Mutex<Vec<String>>,
    }

    impl Canned {
        fn new(mut replies: Vec<Result<(u16, String), String>>) -> Self {
            replies.reverse();
            Canned {
                replies: Mutex::new(replies),
                calls: Mutex::new(Vec::new()),
            }
        }
    }

    impl Transport for Canned {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, body: &str) -> Result<(u16, String), String> {
            self.calls.lock().push(body.to_string());
            self.replies.lock().pop().unwrap_or(Err("no more replies".into()))
        }
    }

    fn chat(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]}).to_string()
    }

    fn req() -> ChatRequest {
        ChatRequest {
            model: "gpt".into(),
            temperature: 0.7,
            max_tokens: 100,
            messages: vec![ChatMessage::user("hello")],
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 0,
        }
    }

    #[test]
    fn retries_429_then_succeeds() {
        let t = Canned::new(vec![
            Ok((429, "slow down".into())),
            Ok((429, "slow down".into())),
            Ok((200, chat("hi"))),
        ]);
        let p = OpenAiProvider::with_transport("http://x", None, fast(), t);
        assert_eq!(p.complete(&req()).unwrap(), "hi");
        let calls = p.transport.calls.lock();
        assert_eq!(calls.len(), 3);
        let body: Value = serde_json::from_str(&calls[0]).unwrap();
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"][0]["role"], "user");
    }

    #[test]
    fn exhausted_retries_and_client_errors() {
        let t = Canned::new(vec![Err("refused".into()), Ok((503, "".into())), Ok((500, "".into()))]);
        let p = OpenAiProvider::with_transport("http://x", None, fast(), t);
        assert!(matches!(p.complete(&req()), Err(GatewayError::Transport(_))));

        let t = Canned::new(vec![Ok((401, "bad key".into()))]);
        let p = OpenAiProvider::with_transport("http://x", None, fast(), t);
        assert!(matches!(p.complete(&req()), Err(GatewayError::Transport(m)) if m.contains("401")));
        assert_eq!(p.transport.calls.lock().len(), 1);
    }

    #[test]
    fn empty_content_is_refusal() {
        let t = Canned::new(vec![Ok((200, chat("")))]);
        let p = OpenAiProvider::with_transport("http://x", None, fast(), t);
        assert!(p.complete(&req()).unwrap_err().is_refusal());
    }

    #[test]
    fn missing_key_variable() {
        let t = Canned::new(vec![]);
        let p = OpenAiProvider::with_transport(
            "http://x",
            Some("CLIENTSIM_TEST_UNSET_KEY_VAR".into()),
            fast(),
            t,
        );
        assert!(matches!(p.complete(&req()), Err(GatewayError::Config(_))));
    }

    #[test]
    fn embeddings() {
        let t = Canned::new(vec![Ok((200, json!({"data": [{"embedding": [0.5, 0.25]}]}).to_string()))]);
        let e = HttpEmbedder::with_transport("http://x", "emb", t);
        assert_eq!(e.embed("text").unwrap(), vec![0.5, 0.25]);
        let t = Canned::new(vec![Ok((200, "{}".into()))]);
        let e = HttpEmbedder::with_transport("http://x", "emb", t);
        assert!(e.embed("text").is_err());
    }
}
