//! Token scoring and embedding backends.
//!
//! Token offsets on the wire are Unicode code point indices into the input.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unreachable: {0}")]
    Unreachable(String),
    #[error("scorer returned an invalid response: {0}")]
    Protocol(String),
}

/// A token with code-point offsets into the scored text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub scorer_id: String,
    pub tokens: Vec<ScoredToken>,
    pub nll: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub scorer_id: String,
    pub dim: usize,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerInfo {
    pub scorer_id: String,
    pub dim: usize,
    pub max_len: usize,
    pub mode: String,
}

pub trait Scorer: Send + Sync {
    fn info(&self) -> Result<ScorerInfo, ScorerError>;
    fn score_sequence(&self, text: &str) -> Result<TokenScores, ScorerError>;
    fn embed(&self, text: &str) -> Result<Embedding, ScorerError>;
}

/// Check token spans against the text: equal lengths, in bounds, ordered,
/// non-overlapping, and each token's text equal to its span.
pub fn validate_scores(text: &str, s: &TokenScores) -> Result<(), ScorerError> {
    if s.tokens.len() != s.nll.len() {
        return Err(ScorerError::Protocol(format!("{} tokens but {} scores", s.tokens.len(), s.nll.len())));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut prev_end = 0;
    for (i, t) in s.tokens.iter().enumerate() {
        if t.start < prev_end || t.end <= t.start || t.end > chars.len() {
            return Err(ScorerError::Protocol(format!("token {i} has span {}..{}", t.start, t.end)));
        }
        let span: String = chars[t.start..t.end].iter().collect();
        if span != t.text {
            return Err(ScorerError::Protocol(format!("token {i} text does not match its span")));
        }
        if !s.nll[i].is_finite() {
            return Err(ScorerError::Protocol(format!("token {i} has a non-finite score")));
        }
        prev_end = t.end;
    }
    Ok(())
}

/// Client for the scoring service.
pub struct HttpScorer {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        HttpScorer {
            base_url: base_url.trim_end_matches('/').to_string(),
            client: reqwest::blocking::Client::builder().timeout(timeout).build().expect("http client builds"),
        }
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, path: &str, text: &str) -> Result<T, ScorerError> {
        let resp = self
            .client
            .post(format!("{}{}", self.base_url, path))
            .json(&serde_json::json!({ "text": text }))
            .send()
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        Self::decode(resp)
    }

    fn decode<T: for<'de> Deserialize<'de>>(resp: reqwest::blocking::Response) -> Result<T, ScorerError> {
        let status = resp.status();
        let body = resp.text().map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        if status.as_u16() == 413 {
            return Err(ScorerError::Protocol(format!("input too long: {body}")));
        }
        if status.is_server_error() {
            return Err(ScorerError::Unreachable(format!("{status}: {body}")));
        }
        if !status.is_success() {
            return Err(ScorerError::Protocol(format!("{status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| ScorerError::Protocol(e.to_string()))
    }
}

impl Scorer for HttpScorer {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        let resp = self
            .client
            .get(format!("{}/info", self.base_url))
            .send()
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        Self::decode(resp)
    }

    fn score_sequence(&self, text: &str) -> Result<TokenScores, ScorerError> {
        let s: TokenScores = self.post("/score_sequence", text)?;
        validate_scores(text, &s)?;
        Ok(s)
    }

    fn embed(&self, text: &str) -> Result<Embedding, ScorerError> {
        let e: Embedding = self.post("/embed", text)?;
        if e.vector.len() != e.dim {
            return Err(ScorerError::Protocol(format!("dim {} but vector has {} entries", e.dim, e.vector.len())));
        }
        Ok(e)
    }
}

pub const STUB_DIM: usize = 64;
pub const STUB_STRUCTURAL_SCORE: f64 = 1.0;

fn hash_unit(label: &str, text: &str) -> f64 {
    let d = Sha256::digest(format!("{label}\u{1f}{text}").as_bytes());
    let x = u64::from_be_bytes(d[..8].try_into().unwrap());
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic in-process scorer. String-literal contents and numbers are
/// value tokens scored in `[5, 10)`; identifiers and punctuation are
/// structural and all score 1.0. Embeddings are hashed character trigrams.
#[derive(Debug, Clone, Default)]
pub struct StubScorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubKind {
    Structural,
    Value,
}

/// Stub tokenization with code-point spans.
pub fn stub_tokens(text: &str) -> Vec<(ScoredToken, StubKind)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let tok = |s: usize, e: usize| ScoredToken { text: chars[s..e].iter().collect(), start: s, end: e };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '"' || c == '\'' || c == '`' {
            if let Some(close) = (i + 1..chars.len()).find(|&j| chars[j] == c && chars[j - 1] != '\\') {
                if close > i + 1 {
                    out.push((tok(i + 1, close), StubKind::Value));
                }
                i = close + 1;
                continue;
            }
            out.push((tok(i, i + 1), StubKind::Structural));
            i += 1;
            continue;
        }
        if c.is_alphanumeric() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || (chars[s].is_ascii_digit() && chars[i] == '.')) {
                i += 1;
            }
            let kind = if chars[s].is_ascii_digit() { StubKind::Value } else { StubKind::Structural };
            out.push((tok(s, i), kind));
            continue;
        }
        out.push((tok(i, i + 1), StubKind::Structural));
        i += 1;
    }
    out
}

impl Scorer for StubScorer {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        Ok(ScorerInfo { scorer_id: "stub".into(), dim: STUB_DIM, max_len: usize::MAX, mode: "stub".into() })
    }

    fn score_sequence(&self, text: &str) -> Result<TokenScores, ScorerError> {
        let (tokens, nll) = stub_tokens(text)
            .into_iter()
            .map(|(t, k)| {
                let s = match k {
                    StubKind::Structural => STUB_STRUCTURAL_SCORE,
                    StubKind::Value => 5.0 + 5.0 * hash_unit("nll", &t.text),
                };
                (t, s)
            })
            .unzip();
        Ok(TokenScores { scorer_id: "stub".into(), tokens, nll })
    }

    fn embed(&self, text: &str) -> Result<Embedding, ScorerError> {
        Ok(Embedding { scorer_id: "stub".into(), dim: STUB_DIM, vector: trigram_embedding(text, STUB_DIM) })
    }
}

/// L2-normalized signed feature hashing of lowercase character trigrams.
pub fn trigram_embedding(text: &str, dim: usize) -> Vec<f32> {
    let padded: Vec<char> = std::iter::once('\u{2}').chain(text.to_lowercase().chars()).chain(std::iter::once('\u{3}')).collect();
    let mut v = vec![0f32; dim];
    for w in padded.windows(3) {
        let g: String = w.iter().collect();
        let d = Sha256::digest(g.as_bytes());
        let idx = u32::from_be_bytes(d[..4].try_into().unwrap()) as usize % dim;
        let sign = if d[4] & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_tokenization() {
        let toks: Vec<(String, StubKind)> = stub_tokens("user.email = 'li.ming@qq.com'").into_iter().map(|(t, k)| (t.text, k)).collect();
        use StubKind::*;
        assert_eq!(
            toks,
            [
                ("user".into(), Structural),
                (".".into(), Structural),
                ("email".into(), Structural),
                ("=".into(), Structural),
                ("li.ming@qq.com".into(), Value)
            ]
        );
    }

    #[test]
    fn stub_scores_are_valid_and_deterministic() {
        let text = "call(\"+86 138 4411 5022\", 42) // é";
        let a = StubScorer.score_sequence(text).unwrap();
        validate_scores(text, &a).unwrap();
        assert_eq!(a, StubScorer.score_sequence(text).unwrap());
        assert!(a.nll.iter().all(|&s| s == 1.0 || (5.0..10.0).contains(&s)));
    }

    #[test]
    fn validation_rejects_bad_spans() {
        let mut s = StubScorer.score_sequence("a = 1").unwrap();
        s.tokens[1].start = 0;
        assert!(validate_scores("a = 1", &s).is_err());
        let mut s = StubScorer.score_sequence("a = 1").unwrap();
        s.nll.pop();
        assert!(validate_scores("a = 1", &s).is_err());
    }

    #[test]
    fn embeddings_normalized_and_similar_for_similar_text() {
        let a = StubScorer.embed("li.ming@qq.com").unwrap().vector;
        let b = StubScorer.embed("li.ming88@qq.com").unwrap().vector;
        let c = StubScorer.embed("Tr0ub4dor&3").unwrap().vector;
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
        let dot = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f32>();
        assert!(dot(&a, &b) > dot(&a, &c));
    }
}
