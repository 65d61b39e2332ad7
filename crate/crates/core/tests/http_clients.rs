use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use leakaudit::library::scorer::{HttpScorer, Scorer, ScorerError};
use leakaudit::llm::provider::HttpProvider;
use leakaudit::llm::{GatewayError, LlmGateway, RateLimiter, RetryPolicy, Role, RoleBinding};
use leakaudit::verification::search::{CodeSearch, GithubSearch, SearchError};

fn spawn(app: Router) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(l, app).await.unwrap();
        });
    });
    format!("http://{addr}")
}

/// Whitespace tokenizer with code-point offsets, scoring each token by its length.
fn score_body(text: &str) -> Value {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut nll = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let s = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        tokens.push(json!({"text": chars[s..i].iter().collect::<String>(), "start": s, "end": i}));
        nll.push((i - s) as f64);
    }
    json!({"scorer_id": "mlm-test", "tokens": tokens, "nll": nll})
}

fn scorer_app(seen: Arc<Mutex<Vec<Value>>>, broken: bool) -> Router {
    Router::new()
        .route("/info", get(|| async { Json(json!({"scorer_id": "mlm-test", "dim": 3, "max_len": 512, "mode": "pseudo_perplexity"})) }))
        .route(
            "/score_sequence",
            post(move |State(seen): State<Arc<Mutex<Vec<Value>>>>, Json(body): Json<Value>| async move {
                seen.lock().unwrap().push(body.clone());
                let mut v = score_body(body["text"].as_str().unwrap());
                if broken {
                    v["tokens"][0]["end"] = json!(99);
                }
                Json(v)
            }),
        )
        .route(
            "/embed",
            post(move |Json(body): Json<Value>| async move {
                let n = body["text"].as_str().unwrap().chars().count() as f32;
                let dim = if broken { 2 } else { 3 };
                Json(json!({"scorer_id": "mlm-test", "dim": 3, "vector": vec![n; dim]}))
            }),
        )
        .with_state(seen)
}

#[test]
fn scorer_wire_format() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let url = spawn(scorer_app(seen.clone(), false));
    let s = HttpScorer::new(&url, Duration::from_secs(5));
    let info = s.info().unwrap();
    assert_eq!((info.scorer_id.as_str(), info.dim, info.max_len, info.mode.as_str()), ("mlm-test", 3, 512, "pseudo_perplexity"));

    // Offsets are code points: "é" is one position although two bytes.
    let text = "é = 'li.ming@qq.com'";
    let scores = s.score_sequence(text).unwrap();
    assert_eq!(scores.tokens.iter().map(|t| (t.start, t.end)).collect::<Vec<_>>(), [(0, 1), (2, 3), (4, 20)]);
    assert_eq!(scores.nll, [1.0, 1.0, 16.0]);
    assert_eq!(seen.lock().unwrap()[0], json!({"text": text}));

    let e = s.embed("abcd").unwrap();
    assert_eq!((e.dim, e.vector), (3, vec![4.0; 3]));
}

#[test]
fn scorer_rejects_inconsistent_replies() {
    let url = spawn(scorer_app(Arc::new(Mutex::new(Vec::new())), true));
    let s = HttpScorer::new(&url, Duration::from_secs(5));
    assert!(matches!(s.score_sequence("a b"), Err(ScorerError::Protocol(_))));
    assert!(matches!(s.embed("a b"), Err(ScorerError::Protocol(_))));
    let down = HttpScorer::new("http://127.0.0.1:9", Duration::from_millis(300));
    assert!(matches!(down.info(), Err(ScorerError::Unreachable(_))));
}

#[derive(Clone, Default)]
struct GhState {
    calls: Arc<AtomicUsize>,
    limited_first: bool,
    queries: Arc<Mutex<Vec<(String, String, String)>>>,
}

async fn gh_search(State(st): State<GhState>, headers: HeaderMap, Query(q): Query<Vec<(String, String)>>) -> axum::response::Response {
    let n = st.calls.fetch_add(1, Ordering::SeqCst);
    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string()).unwrap_or_default();
    if auth != "Bearer tok" {
        return (StatusCode::UNAUTHORIZED, "bad credentials").into_response();
    }
    let accept = headers.get("accept").map(|v| v.to_str().unwrap().to_string()).unwrap_or_default();
    let query = q.iter().find(|(k, _)| k == "q").map(|(_, v)| v.clone()).unwrap_or_default();
    let per_page = q.iter().find(|(k, _)| k == "per_page").map(|(_, v)| v.clone()).unwrap_or_default();
    st.queries.lock().unwrap().push((query, per_page, accept));
    if st.limited_first && n == 0 {
        let reset = chrono::Utc::now().timestamp().to_string();
        return (StatusCode::FORBIDDEN, [("x-ratelimit-remaining", "0".to_string()), ("x-ratelimit-reset", reset)], "rate limited").into_response();
    }
    Json(json!({
        "total_count": 3,
        "items": [{"repository": {"full_name": "octo/app"}, "path": "src/user.py", "text_matches": [{"fragment": "EMAIL = 'li.ming@qq.com'\nsecond line"}]}]
    }))
    .into_response()
}

fn github(st: GhState) -> String {
    spawn(Router::new().route("/search/code", get(gh_search)).with_state(st))
}

#[test]
fn github_search_request_and_parse() {
    let st = GhState::default();
    let url = github(st.clone());
    let gh = GithubSearch::new(&url, Some("tok".into())).with_limits(0, 2, Duration::from_secs(3));
    let hits = gh.search("li.ming@qq.com").unwrap();
    assert_eq!(hits.total, 3);
    assert_eq!(hits.evidence[0].repository, "octo/app");
    assert_eq!(hits.evidence[0].path, "src/user.py");
    assert!(hits.evidence[0].snippet.contains("li.ming@qq.com"));
    let (q, per_page, accept) = st.queries.lock().unwrap()[0].clone();
    assert_eq!(q, "\"li.ming@qq.com\"");
    assert_eq!(per_page, "10");
    assert!(accept.contains("text-match"));
}

#[test]
fn github_search_waits_out_rate_limit() {
    let st = GhState { limited_first: true, ..Default::default() };
    let url = github(st.clone());
    let gh = GithubSearch::new(&url, Some("tok".into())).with_limits(0, 2, Duration::from_secs(3));
    assert_eq!(gh.search("li.ming@qq.com").unwrap().total, 3);
    assert_eq!(st.calls.load(Ordering::SeqCst), 2);
}

#[test]
fn github_search_auth_failures() {
    let url = github(GhState::default());
    let wrong = GithubSearch::new(&url, Some("nope".into())).with_limits(0, 0, Duration::from_secs(1));
    assert!(matches!(wrong.search("x@y.com"), Err(SearchError::Auth(_))));
    let missing = GithubSearch::new(&url, None);
    assert!(matches!(missing.search("x@y.com"), Err(SearchError::Auth(_))));
}

fn chat_app(calls: Arc<AtomicUsize>, seen: Arc<Mutex<Vec<Value>>>) -> Router {
    Router::new().route(
        "/chat/completions",
        post(move |headers: HeaderMap, Json(body): Json<Value>| {
            let calls = calls.clone();
            let seen = seen.clone();
            async move {
                let n = calls.fetch_add(1, Ordering::SeqCst);
                if headers.get("authorization").map(|v| v.to_str().unwrap()) != Some("Bearer key") {
                    return (StatusCode::UNAUTHORIZED, "no").into_response();
                }
                seen.lock().unwrap().push(body);
                if n == 0 {
                    return (StatusCode::TOO_MANY_REQUESTS, [("retry-after", "0")], "slow down").into_response();
                }
                Json(json!({"choices": [{"message": {"role": "assistant", "content": "```python\nprint(1)\n```"}}]})).into_response()
            }
        }),
    )
}

fn gateway(url: &str, key: Option<&str>) -> LlmGateway {
    let p = HttpProvider::new("remote", url, key.map(String::from), Duration::from_secs(5));
    let retry = RetryPolicy { max_retries: 2, base_delay_ms: 1, max_delay_ms: 5 };
    LlmGateway::new()
        .with_provider("remote", Arc::new(p), RateLimiter::unlimited(), retry)
        .bind(Role::Test, RoleBinding { provider: "remote".into(), model: "code-model".into(), decoding: Default::default() })
}

#[test]
fn chat_provider_retries_and_parses() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(Mutex::new(Vec::new()));
    let url = spawn(chat_app(calls.clone(), seen.clone()));
    let reply = gateway(&url, Some("key")).complete(Role::Test, "write code").unwrap();
    assert!(reply.text.contains("print(1)"));
    assert!(!reply.refused);
    assert_eq!(calls.load(Ordering::SeqCst), 2);
    let body = seen.lock().unwrap()[1].clone();
    assert_eq!(body["model"], "code-model");
    assert_eq!(body["messages"].as_array().unwrap().last().unwrap()["content"], "write code");
}

#[test]
fn chat_provider_auth_is_not_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let url = spawn(chat_app(calls.clone(), Arc::new(Mutex::new(Vec::new()))));
    let err = gateway(&url, Some("wrong")).complete(Role::Test, "write code").unwrap_err();
    assert!(matches!(err, GatewayError::Auth { .. }));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}
