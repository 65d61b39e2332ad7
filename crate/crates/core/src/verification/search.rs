//! Public code search backends: live GitHub, checked-in fixtures, caching.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::llm::ratelimit::RateLimiter;

pub const GITHUB_TOKEN_VAR: &str = "AUDIT_GITHUB_TOKEN";
pub const GITHUB_API: &str = "https://api.github.com";
const MAX_EVIDENCE: usize = 10;
const SNIPPET_LINES: usize = 3;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("code search credential missing or rejected: {0}")]
    Auth(String),
    #[error("code search rate limit not lifted after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("code search request failed: {0}")]
    Http(String),
    #[error("unexpected code search response: {0}")]
    Protocol(String),
    #[error("search fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub repository: String,
    pub path: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SearchHits {
    pub total: u64,
    #[serde(default)]
    pub evidence: Vec<Evidence>,
}

/// Recorded search result for one candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub candidate_id: String,
    pub query: String,
    pub total: u64,
    #[serde(default)]
    pub evidence: Vec<Evidence>,
}

pub trait CodeSearch: Send + Sync {
    fn search(&self, query: &str) -> Result<SearchHits, SearchError>;
}

fn snippet(fragment: &str) -> String {
    fragment.lines().take(SNIPPET_LINES).collect::<Vec<_>>().join("\n")
}

/// Parse a GitHub code-search response body.
pub fn parse_github_response(body: &Value) -> Result<SearchHits, SearchError> {
    let total = body
        .get("total_count")
        .and_then(Value::as_u64)
        .ok_or_else(|| SearchError::Protocol("missing total_count".into()))?;
    let evidence = body
        .get("items")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .take(MAX_EVIDENCE)
                .map(|it| Evidence {
                    repository: it.pointer("/repository/full_name").and_then(Value::as_str).unwrap_or_default().to_string(),
                    path: it.get("path").and_then(Value::as_str).unwrap_or_default().to_string(),
                    snippet: it.pointer("/text_matches/0/fragment").and_then(Value::as_str).map(snippet).unwrap_or_default(),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(SearchHits { total, evidence })
}

/// GitHub REST code search with exact-phrase queries.
pub struct GithubSearch {
    base_url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    max_retries: u32,
    max_wait: Duration,
}

impl GithubSearch {
    pub fn from_env() -> Self {
        Self::new(GITHUB_API, std::env::var(GITHUB_TOKEN_VAR).ok())
    }

    pub fn new(base_url: &str, token: Option<String>) -> Self {
        GithubSearch {
            base_url: base_url.trim_end_matches('/').to_string(),
            token,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .user_agent("leakaudit")
                .build()
                .expect("http client builds"),
            limiter: RateLimiter::per_minute(10),
            max_retries: 3,
            max_wait: Duration::from_secs(120),
        }
    }

    pub fn with_limits(mut self, per_minute: u32, max_retries: u32, max_wait: Duration) -> Self {
        self.limiter = RateLimiter::per_minute(per_minute);
        self.max_retries = max_retries;
        self.max_wait = max_wait;
        self
    }

    fn reset_wait(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
        let h = |k: &str| headers.get(k).and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse::<u64>().ok());
        if let Some(s) = h("retry-after") {
            return Some(Duration::from_secs(s));
        }
        if h("x-ratelimit-remaining") == Some(0) {
            let reset = h("x-ratelimit-reset")?;
            let now = chrono::Utc::now().timestamp().max(0) as u64;
            return Some(Duration::from_secs(reset.saturating_sub(now) + 1));
        }
        None
    }
}

impl CodeSearch for GithubSearch {
    fn search(&self, query: &str) -> Result<SearchHits, SearchError> {
        let token = self.token.as_deref().ok_or_else(|| SearchError::Auth(format!("{GITHUB_TOKEN_VAR} is not set")))?;
        let q = format!("\"{}\"", query.replace('"', " "));
        let mut attempts = 0;
        loop {
            self.limiter.acquire();
            attempts += 1;
            let resp = self
                .client
                .get(format!("{}/search/code", self.base_url))
                .query(&[("q", q.as_str()), ("per_page", "10")])
                .bearer_auth(token)
                .header("Accept", "application/vnd.github.text-match+json")
                .send()
                .map_err(|e| SearchError::Http(e.to_string()))?;
            let status = resp.status().as_u16();
            let wait = Self::reset_wait(resp.headers());
            let body = resp.text().map_err(|e| SearchError::Http(e.to_string()))?;
            match status {
                200 => {
                    let v: Value = serde_json::from_str(&body).map_err(|e| SearchError::Protocol(e.to_string()))?;
                    return parse_github_response(&v);
                }
                401 => return Err(SearchError::Auth(body)),
                403 | 429 if wait.is_some() || status == 429 => {
                    if attempts > self.max_retries {
                        return Err(SearchError::RateLimited { attempts });
                    }
                    let w = wait.unwrap_or(Duration::from_secs(1 << attempts.min(6))).min(self.max_wait);
                    log::warn!("code search rate limited, waiting {}s", w.as_secs());
                    std::thread::sleep(w);
                }
                403 => return Err(SearchError::Auth(body)),
                500..=599 if attempts <= self.max_retries => {
                    std::thread::sleep(Duration::from_millis(500 << attempts.min(6)));
                }
                _ => return Err(SearchError::Http(format!("{status}: {body}"))),
            }
        }
    }
}

/// Offline search answering from a JSON map of query (or SHA-256 of the
/// query) to a hit count or a full hit object. Unknown queries have no hits.
#[derive(Debug, Clone, Default)]
pub struct FixtureSearch {
    entries: HashMap<String, SearchHits>,
}

impl FixtureSearch {
    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Entry {
            Count(u64),
            Hits(SearchHits),
        }
        let raw: HashMap<String, Entry> = serde_json::from_str(text).map_err(|e| SearchError::Fixture(e.to_string()))?;
        let entries = raw
            .into_iter()
            .map(|(k, e)| {
                let hits = match e {
                    Entry::Count(total) => SearchHits { total, evidence: vec![] },
                    Entry::Hits(h) => h,
                };
                (k, hits)
            })
            .collect();
        Ok(FixtureSearch { entries })
    }
}

impl CodeSearch for FixtureSearch {
    fn search(&self, query: &str) -> Result<SearchHits, SearchError> {
        Ok(self
            .entries
            .get(query)
            .or_else(|| self.entries.get(&sha256_hex(query)))
            .cloned()
            .unwrap_or_default())
    }
}

/// Per-run cache in front of another backend.
pub struct CachedSearch<S> {
    inner: S,
    cache: Mutex<HashMap<String, SearchHits>>,
}

impl<S: CodeSearch> CachedSearch<S> {
    pub fn new(inner: S) -> Self {
        CachedSearch { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn preload(&self, query: &str, hits: SearchHits) {
        self.cache.lock().unwrap().insert(query.to_string(), hits);
    }
}

impl<S: CodeSearch> CodeSearch for CachedSearch<S> {
    fn search(&self, query: &str) -> Result<SearchHits, SearchError> {
        if let Some(h) = self.cache.lock().unwrap().get(query) {
            return Ok(h.clone());
        }
        let h = self.inner.search(query)?;
        self.cache.lock().unwrap().insert(query.to_string(), h.clone());
        Ok(h)
    }
}

impl CodeSearch for Box<dyn CodeSearch> {
    fn search(&self, query: &str) -> Result<SearchHits, SearchError> {
        (**self).search(query)
    }
}
