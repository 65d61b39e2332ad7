//! Uniform client for the question-generation, test and judge models.

pub mod provider;
pub mod ratelimit;
pub mod refusal;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::{sha256_hex, short_id};
pub use provider::{
    ChatMessage, ChatRequest, HttpProvider, LlmProvider, MockFixture, MockProvider, MockRule,
    ProviderError, ProviderReply, ReplayProvider, RequestMeta,
};
pub use ratelimit::RateLimiter;
pub use refusal::{detect_refusal, has_code_block, RefusalDetector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    QuestionGen,
    Test,
    Judge,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::QuestionGen => "question_gen",
            Role::Test => "test",
            Role::Judge => "judge",
        })
    }
}

/// Decoding overrides; absent fields use the provider default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub provider: String,
    pub model: String,
    #[serde(default)]
    pub decoding: Decoding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmReply {
    pub text: String,
    pub refused: bool,
    pub latency_ms: u64,
    pub raw: Value,
    pub request_id: String,
}

/// One recorded request/response pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Exchange {
    pub request_id: String,
    pub role: Role,
    pub provider: String,
    pub model: String,
    pub prompt: String,
    pub prompt_hash: String,
    pub reply: String,
    pub refused: bool,
    pub latency_ms: u64,
    pub attempts: u32,
    pub raw: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub at: DateTime<Utc>,
}

/// Where exchanges are persisted before a reply is handed back.
pub trait ExchangeSink: Send + Sync {
    fn record(&self, exchange: &Exchange) -> Result<(), String>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("role `{0}` is not configured")]
    UnknownRole(Role),
    #[error("provider `{0}` is not configured")]
    UnknownProvider(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("provider `{provider}` unreachable after {attempts} attempts: {detail}")]
    Unreachable { provider: String, attempts: u32, detail: String },
    #[error("provider `{provider}` rejected credentials: {detail}")]
    Auth { provider: String, detail: String },
    #[error("provider `{provider}` quota exhausted: {detail}")]
    Quota { provider: String, detail: String },
    #[error("provider `{provider}` protocol error: {detail}")]
    Protocol { provider: String, detail: String },
    #[error("no recorded reply for request `{0}`")]
    ReplayMiss(String),
    #[error("failed to record exchange: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay_ms: 500, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

struct ProviderSlot {
    provider: Arc<dyn LlmProvider>,
    limiter: RateLimiter,
    retry: RetryPolicy,
}

/// Per-call options.
#[derive(Debug, Clone, Copy, Default)]
pub struct CallOptions {
    /// Treat a reply without a fenced code block as a refusal.
    pub require_code: bool,
}

pub struct LlmGateway {
    bindings: BTreeMap<Role, RoleBinding>,
    providers: BTreeMap<String, ProviderSlot>,
    refusal: RefusalDetector,
    sink: Option<Arc<dyn ExchangeSink>>,
    occurrences: Mutex<HashMap<String, u32>>,
}

impl LlmGateway {
    pub fn new() -> Self {
        LlmGateway {
            bindings: BTreeMap::new(),
            providers: BTreeMap::new(),
            refusal: RefusalDetector::default(),
            sink: None,
            occurrences: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_provider(
        mut self,
        name: &str,
        provider: Arc<dyn LlmProvider>,
        limiter: RateLimiter,
        retry: RetryPolicy,
    ) -> Self {
        self.providers.insert(name.to_string(), ProviderSlot { provider, limiter, retry });
        self
    }

    pub fn bind(mut self, role: Role, binding: RoleBinding) -> Self {
        self.bindings.insert(role, binding);
        self
    }

    pub fn with_refusal(mut self, refusal: RefusalDetector) -> Self {
        self.refusal = refusal;
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn ExchangeSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn binding(&self, role: Role) -> Option<&RoleBinding> {
        self.bindings.get(&role)
    }

    pub fn refusal_detector(&self) -> &RefusalDetector {
        &self.refusal
    }

    /// Single-prompt completion with refusal classification.
    pub fn complete(&self, role: Role, prompt: &str) -> Result<LlmReply, GatewayError> {
        self.complete_with(role, prompt, CallOptions::default())
    }

    pub fn complete_with(
        &self,
        role: Role,
        prompt: &str,
        opts: CallOptions,
    ) -> Result<LlmReply, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let binding = self.bindings.get(&role).ok_or(GatewayError::UnknownRole(role))?;
        let slot = self
            .providers
            .get(&binding.provider)
            .ok_or_else(|| GatewayError::UnknownProvider(binding.provider.clone()))?;

        let prompt_hash = sha256_hex(prompt);
        let request_id = self.next_request_id(role, binding, &prompt_hash);
        let meta = RequestMeta { role, request_id: request_id.clone() };
        let req = ChatRequest {
            model: binding.model.clone(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature: binding.decoding.temperature,
            top_p: binding.decoding.top_p,
            max_tokens: binding.decoding.max_tokens,
        };

        let started = Instant::now();
        let mut attempts = 0u32;
        let outcome = loop {
            slot.limiter.acquire();
            attempts += 1;
            match slot.provider.send(&meta, &req) {
                Ok(reply) => break Ok(reply),
                Err(ProviderError::Transient(detail)) => {
                    if attempts > slot.retry.max_retries {
                        break Err(GatewayError::Unreachable {
                            provider: binding.provider.clone(),
                            attempts,
                            detail,
                        });
                    }
                    std::thread::sleep(slot.retry.backoff(attempts - 1));
                }
                Err(ProviderError::RateLimited { retry_after }) => {
                    if attempts > slot.retry.max_retries {
                        break Err(GatewayError::Unreachable {
                            provider: binding.provider.clone(),
                            attempts,
                            detail: "rate limited".into(),
                        });
                    }
                    let backoff = slot.retry.backoff(attempts - 1);
                    std::thread::sleep(retry_after.map(|r| r.max(backoff)).unwrap_or(backoff));
                }
                Err(ProviderError::Auth(detail)) => {
                    break Err(GatewayError::Auth { provider: binding.provider.clone(), detail })
                }
                Err(ProviderError::Quota(detail)) => {
                    break Err(GatewayError::Quota { provider: binding.provider.clone(), detail })
                }
                Err(ProviderError::Protocol(detail)) => {
                    break Err(GatewayError::Protocol { provider: binding.provider.clone(), detail })
                }
                Err(ProviderError::ReplayMiss(id)) => break Err(GatewayError::ReplayMiss(id)),
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        let (reply_text, raw, refused, error) = match &outcome {
            Ok(r) => {
                let refused = self.refusal.is_refusal(&r.text, opts.require_code);
                (r.text.clone(), r.raw.clone(), refused, None)
            }
            Err(e) => (String::new(), Value::Null, false, Some(e.to_string())),
        };
        let exchange = Exchange {
            request_id: request_id.clone(),
            role,
            provider: binding.provider.clone(),
            model: binding.model.clone(),
            prompt: prompt.to_string(),
            prompt_hash,
            reply: reply_text.clone(),
            refused,
            latency_ms,
            attempts,
            raw: raw.clone(),
            error,
            at: Utc::now(),
        };
        if let Some(sink) = &self.sink {
            sink.record(&exchange).map_err(GatewayError::Record)?;
        }
        outcome.map(|_| LlmReply { text: reply_text, refused, latency_ms, raw, request_id })
    }

    /// Deterministic id: role, model, prompt digest and the occurrence count
    /// of that triple within this gateway.
    fn next_request_id(&self, role: Role, binding: &RoleBinding, prompt_hash: &str) -> String {
        let key = format!("{role}|{}|{prompt_hash}", binding.model);
        let mut occ = self.occurrences.lock().unwrap();
        let n = occ.entry(key).or_insert(0);
        let id = short_id(&[&role.to_string(), &binding.model, prompt_hash, &n.to_string()]);
        *n += 1;
        id
    }
}

impl Default for LlmGateway {
    fn default() -> Self {
        Self::new()
    }
}
