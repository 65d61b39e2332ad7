//! Provider backends: live HTTP chat completions, canned fixtures, and replay
//! from a recorded run.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Exchange, Role};
use crate::digest::sha256_hex;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

/// Call metadata handed to providers alongside the request body.
#[derive(Debug, Clone)]
pub struct RequestMeta {
    pub role: Role,
    pub request_id: String,
}

#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub text: String,
    pub raw: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderError {
    /// Network failure or 5xx; retried.
    Transient(String),
    /// 429 without quota exhaustion; retried after the hinted delay.
    RateLimited { retry_after: Option<Duration> },
    Auth(String),
    Quota(String),
    Protocol(String),
    ReplayMiss(String),
}

pub trait LlmProvider: Send + Sync {
    fn send(&self, meta: &RequestMeta, req: &ChatRequest) -> Result<ProviderReply, ProviderError>;
}

/// Environment variable holding the credential for `provider`:
/// `AUDIT_<PROVIDER>_KEY`, upper-cased with non-alphanumerics as `_`.
pub fn credential_var(provider: &str) -> String {
    let name: String = provider
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("AUDIT_{name}_KEY")
}

/// OpenAI-style `POST {base}/chat/completions`.
pub struct HttpProvider {
    name: String,
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    /// Reads the credential from the environment; a missing key surfaces as
    /// an auth failure on the first request.
    pub fn from_env(name: &str, base_url: &str, timeout: Duration) -> Self {
        let key = std::env::var(credential_var(name)).ok();
        Self::new(name, base_url, key, timeout)
    }

    pub fn new(name: &str, base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        HttpProvider {
            name: name.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            client,
        }
    }
}

impl LlmProvider for HttpProvider {
    fn send(&self, _meta: &RequestMeta, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| ProviderError::Auth(format!("{} is not set", credential_var(&self.name))))?;
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(key)
            .json(req)
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = resp.text().map_err(|e| ProviderError::Transient(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("{status}: {body}"))),
            402 => return Err(ProviderError::Quota(body)),
            429 if body.contains("insufficient_quota") || body.contains("quota") => {
                return Err(ProviderError::Quota(body))
            }
            429 => return Err(ProviderError::RateLimited { retry_after }),
            500..=599 => return Err(ProviderError::Transient(format!("{status}: {body}"))),
            _ => return Err(ProviderError::Protocol(format!("{status}: {body}"))),
        }
        let raw: Value =
            serde_json::from_str(&body).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        let text = raw
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        Ok(ProviderReply { text, raw })
    }
}

/// One canned-fixture rule. A rule applies when its role (if set) matches and
/// every `contains` substring occurs in the prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub replies: Vec<String>,
    /// Simulated failure instead of a reply: `auth`, `quota`, `unreachable`.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<String>,
}

/// Canned replies. With several replies on a rule, the choice is a function
/// of the prompt digest, so identical prompts always get identical replies.
pub struct MockProvider {
    fixture: MockFixture,
}

impl MockProvider {
    pub fn new(fixture: MockFixture) -> Self {
        MockProvider { fixture }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    /// A provider that answers every prompt with `reply`.
    pub fn constant(reply: &str) -> Self {
        Self::new(MockFixture { rules: vec![], default: Some(reply.to_string()) })
    }
}

impl LlmProvider for MockProvider {
    fn send(&self, meta: &RequestMeta, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let prompt = req.prompt();
        let rule = self.fixture.rules.iter().find(|r| {
            r.role.map(|x| x == meta.role).unwrap_or(true)
                && r.contains.iter().all(|c| prompt.contains(c.as_str()))
        });
        if let Some(err) = rule.and_then(|r| r.error.as_deref()) {
            return Err(match err {
                "auth" => ProviderError::Auth("mock credentials rejected".into()),
                "quota" => ProviderError::Quota("mock quota exhausted".into()),
                _ => ProviderError::Transient("mock provider unreachable".into()),
            });
        }
        let text = match rule {
            Some(r) if !r.replies.is_empty() => {
                let d = sha256_hex(prompt);
                let idx = u64::from_str_radix(&d[..15], 16).unwrap() as usize % r.replies.len();
                r.replies[idx].clone()
            }
            _ => self.fixture.default.clone().unwrap_or_default(),
        };
        Ok(ProviderReply { raw: json!({ "mock": true, "text": text }), text })
    }
}

/// Serves replies recorded in a previous run, keyed by request id.
pub struct ReplayProvider {
    replies: Mutex<HashMap<String, Exchange>>,
}

impl ReplayProvider {
    pub fn new(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        let replies = exchanges
            .into_iter()
            .filter(|e| e.error.is_none())
            .map(|e| (e.request_id.clone(), e))
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .collect();
        ReplayProvider { replies: Mutex::new(replies) }
    }
}

impl LlmProvider for ReplayProvider {
    fn send(&self, meta: &RequestMeta, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let map = self.replies.lock().unwrap();
        let ex = map
            .get(&meta.request_id)
            .ok_or_else(|| ProviderError::ReplayMiss(meta.request_id.clone()))?;
        if ex.prompt_hash != sha256_hex(req.prompt()) {
            return Err(ProviderError::ReplayMiss(format!(
                "{}: recorded prompt differs",
                meta.request_id
            )));
        }
        Ok(ProviderReply { text: ex.reply.clone(), raw: ex.raw.clone() })
    }
}
