//! OpenAI-compatible chat-completions client.

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatRequest, LlmBackend, DEFAULT_MODEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Base URL (`https://api.openai.com/v1`) or the full
    /// `.../chat/completions` URL.
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub max_retries: u32,
    #[serde(with = "secs")]
    pub timeout: Duration,
    /// First retry delay; doubles on every further attempt.
    #[serde(with = "secs")]
    pub backoff: Duration,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: "https://api.openai.com/v1".into(),
            api_key_env: "LLM_API_KEY".into(),
            model: DEFAULT_MODEL.into(),
            max_retries: 3,
            timeout: Duration::from_secs(120),
            backoff: Duration::from_millis(500),
        }
    }
}

impl BackendConfig {
    pub fn completions_url(&self) -> String {
        let base = self.endpoint_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(serde::de::Error::custom("duration must be a non-negative number of seconds"));
        }
        Ok(Duration::from_secs_f64(v))
    }
}

/// Raw HTTP status and body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// One POST of a JSON body. `Err` means the request never produced a status
/// (connection refused, timeout, TLS failure).
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        ReqwestTransport { client: reqwest::blocking::Client::new() }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, String> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header("Content-Type", "application/json")
            .body(body.to_string());
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

/// Chat-completions over HTTP with bearer auth and exponential-backoff
/// retries of transient failures (transport errors, 429, 5xx).
pub struct HttpBackend<T = ReqwestTransport> {
    config: BackendConfig,
    api_key: Option<String>,
    transport: T,
}

impl<T> fmt::Debug for HttpBackend<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend<ReqwestTransport> {
    /// Reads the API key from the configured environment variable. A missing
    /// variable is allowed (local servers often need no key).
    pub fn from_env(config: BackendConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        HttpBackend { config, api_key, transport: ReqwestTransport::new() }
    }
}

impl<T: Transport> HttpBackend<T> {
    pub fn with_transport(config: BackendConfig, api_key: Option<String>, transport: T) -> Self {
        HttpBackend { config, api_key, transport }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn attempt(&self, url: &str, body: &str) -> Result<String, BackendError> {
        let reply = self
            .transport
            .post_json(url, self.api_key.as_deref(), body, self.config.timeout)
            .map_err(BackendError::Transport)?;
        match reply.status {
            200..=299 => parse_completion(&reply.body),
            401 | 403 => Err(BackendError::Auth(format!("HTTP {}", reply.status))),
            429 => Err(BackendError::RateLimit(snippet(&reply.body))),
            s => Err(BackendError::Transport(format!("HTTP {s}: {}", snippet(&reply.body)))),
        }
    }
}

fn is_transient(err: &BackendError) -> bool {
    match err {
        BackendError::RateLimit(_) => true,
        // 4xx other than auth/429 will not improve on retry.
        BackendError::Transport(msg) => !msg.starts_with("HTTP 4"),
        _ => false,
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

fn parse_completion(body: &str) -> Result<String, BackendError> {
    let parsed: CompletionBody =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::MalformedResponse("no completion content".into()))?;
    if content.trim().is_empty() {
        return Err(BackendError::MalformedResponse("empty completion".into()));
    }
    Ok(content)
}

impl<T: Transport> LlmBackend for HttpBackend<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let body = serde_json::to_string(request).expect("request serializes");
        let url = self.config.completions_url();
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&url, &body) {
                Ok(text) => return Ok(text),
                Err(e) if is_transient(&e) && attempt < self.config.max_retries => {
                    log::warn!("attempt {} failed ({e}); retrying in {:?}", attempt + 1, delay);
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Message;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<HttpReply, String>>>,
        seen: Mutex<Vec<(String, Option<String>, String)>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpReply, String>>) -> Self {
            replies.reverse();
            Scripted { replies: Mutex::new(replies), seen: Mutex::new(Vec::new()) }
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, url: &str, bearer: Option<&str>, body: &str, _: Duration) -> Result<HttpReply, String> {
            self.seen.lock().unwrap().push((url.into(), bearer.map(String::from), body.into()));
            self.replies.lock().unwrap().pop().unwrap_or_else(|| Err("connection refused".into()))
        }
    }

    fn ok(content: &str) -> Result<HttpReply, String> {
        Ok(HttpReply {
            status: 200,
            body: serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                .to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpReply, String> {
        Ok(HttpReply { status: code, body: "{}".into() })
    }

    fn cfg(max_retries: u32) -> BackendConfig {
        BackendConfig { max_retries, backoff: Duration::ZERO, ..Default::default() }
    }

    fn req() -> ChatRequest {
        ChatRequest::new("gpt-x", 0.4, vec![Message::system("s"), Message::user("u")])
    }

    #[test]
    fn sends_openai_body_with_bearer() {
        let backend = HttpBackend::with_transport(cfg(0), Some("sk-test".into()), Scripted::new(vec![ok("done")]));
        assert_eq!(backend.complete(&req()).unwrap(), "done");
        let seen = backend.transport.seen.lock().unwrap();
        let (url, bearer, body) = &seen[0];
        assert_eq!(url, "https://api.openai.com/v1/chat/completions");
        assert_eq!(bearer.as_deref(), Some("sk-test"));
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["model"], "gpt-x");
        assert_eq!(v["temperature"], 0.4);
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "u");
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let backend = HttpBackend::with_transport(cfg(2), None, Scripted::new(vec![]));
        let err = backend.complete(&req()).unwrap_err();
        assert_eq!(err.kind(), "transport");
        assert_eq!(backend.transport.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let backend =
            HttpBackend::with_transport(cfg(3), None, Scripted::new(vec![status(429), status(503), ok("x")]));
        assert_eq!(backend.complete(&req()).unwrap(), "x");
        assert_eq!(backend.transport.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn auth_failures_are_not_retried() {
        let backend = HttpBackend::with_transport(cfg(5), None, Scripted::new(vec![status(401)]));
        assert_eq!(backend.complete(&req()).unwrap_err().kind(), "auth");
        assert_eq!(backend.transport.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn empty_or_garbled_completions_are_malformed() {
        for reply in [ok("  "), Ok(HttpReply { status: 200, body: "not json".into() })] {
            let backend = HttpBackend::with_transport(cfg(0), None, Scripted::new(vec![reply]));
            assert_eq!(backend.complete(&req()).unwrap_err().kind(), "malformed_response");
        }
    }

    #[test]
    fn debug_output_redacts_key() {
        let backend = HttpBackend::with_transport(cfg(0), Some("sk-secret".into()), Scripted::new(vec![]));
        let dbg = format!("{backend:?}");
        assert!(!dbg.contains("sk-secret"));
        assert!(dbg.contains("<redacted>"));
    }

    #[test]
    fn url_accepts_base_or_full_path() {
        let c = BackendConfig {
            endpoint_url: "http://localhost:8080/v1/chat/completions/".into(),
            ..Default::default()
        };
        assert_eq!(c.completions_url(), "http://localhost:8080/v1/chat/completions");
    }
}
