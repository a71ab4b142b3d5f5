//! HTTP clients against in-process mock servers.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use base64::Engine;
use parrot::advisor::{build_prompt, request_profile, ChatBackend, ChatError, LlmConfig, OpenAiChat, REPAIR_SUFFIX};
use parrot::crawler::{CrawlError, FetchBackend, FetchPlan, Timeouts, WebDriverBackend, WebDriverConfig};
use parrot::embedding::{Backend, EmbedError, Embedder, EmbedderConfig, RemoteEmbedder};
use parrot::records::HeaderList;
use serde_json::{json, Value};
use url::Url;

#[derive(Debug, Clone)]
struct Seen {
    method: Method,
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Replies from a script in order, repeating the last one, and records
/// every request.
#[derive(Clone, Default)]
struct Mock {
    seen: Arc<Mutex<Vec<Seen>>>,
    script: Arc<Mutex<VecDeque<(StatusCode, Value)>>>,
    route: Option<Arc<dyn Fn(&Method, &str, &Value) -> (StatusCode, Value) + Send + Sync>>,
}

impl Mock {
    fn scripted(replies: Vec<(StatusCode, Value)>) -> Self {
        Self {
            script: Arc::new(Mutex::new(replies.into())),
            ..Self::default()
        }
    }

    fn routed(f: impl Fn(&Method, &str, &Value) -> (StatusCode, Value) + Send + Sync + 'static) -> Self {
        Self {
            route: Some(Arc::new(f)),
            ..Self::default()
        }
    }

    fn seen(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }

    async fn start(&self) -> SocketAddr {
        let app = Router::new().fallback(handle).with_state(self.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        addr
    }
}

async fn handle(State(mock): State<Mock>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let path = uri.path().to_string();
    mock.seen.lock().unwrap().push(Seen {
        method: method.clone(),
        path: path.clone(),
        auth: headers.get("authorization").map(|v| v.to_str().unwrap().to_string()),
        body: body.clone(),
    });
    let (status, reply) = match &mock.route {
        Some(route) => route(&method, &path, &body),
        None => {
            let mut script = mock.script.lock().unwrap();
            if script.len() > 1 {
                script.pop_front().unwrap()
            } else {
                script.front().cloned().expect("mock has a reply")
            }
        }
    };
    (status, axum::Json(reply)).into_response()
}

fn embedder_config(addr: SocketAddr, key_env: &str) -> EmbedderConfig {
    EmbedderConfig {
        backend: Backend::Remote,
        dims: Some(8),
        endpoint: format!("http://{addr}/v1/"),
        api_key_env: key_env.into(),
        backoff_ms: 1,
        max_chars: 10,
        ..EmbedderConfig::default()
    }
}

fn embedding(values: &[f64]) -> Value {
    json!({"data": [{"embedding": values}]})
}

#[tokio::test]
async fn remote_embedder_speaks_the_embeddings_wire_format() {
    let mock = Mock::scripted(vec![(StatusCode::OK, embedding(&[3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))]);
    let addr = mock.start().await;
    std::env::set_var("PARROT_TEST_EMBED_KEY", "sk-embed-secret");
    let embedder = RemoteEmbedder::new(embedder_config(addr, "PARROT_TEST_EMBED_KEY")).unwrap();

    let v = embedder.embed("ünïcode text that is longer than ten characters").await.unwrap();
    assert_eq!(v.values()[..2], [0.6, 0.8]);
    assert!((v.norm() - 1.0).abs() < 1e-12);

    let seen = mock.seen();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-embed-secret"));
    assert_eq!(seen[0].body, json!({"model": "text-embedding-3-small", "input": ["ünïcode te"]}));
    assert!(!format!("{embedder:?}").contains("sk-embed-secret"));
}

#[tokio::test]
async fn remote_embedder_retries_then_gives_up_with_the_last_status() {
    let ok = embedding(&[1.0; 8]);
    let mock = Mock::scripted(vec![(StatusCode::SERVICE_UNAVAILABLE, json!({})), (StatusCode::OK, ok)]);
    let addr = mock.start().await;
    let embedder = RemoteEmbedder::new(embedder_config(addr, "PARROT_TEST_UNSET_KEY")).unwrap();
    embedder.embed("a").await.unwrap();
    assert_eq!(mock.seen().len(), 2);
    assert!(mock.seen().iter().all(|s| s.auth.is_none()));

    let mock = Mock::scripted(vec![(StatusCode::TOO_MANY_REQUESTS, json!({}))]);
    let addr = mock.start().await;
    let embedder = RemoteEmbedder::new(embedder_config(addr, "PARROT_TEST_UNSET_KEY")).unwrap();
    let err = embedder.embed("a").await.unwrap_err();
    assert!(matches!(err, EmbedError::Exhausted { attempts: 3, .. }), "{err}");
    assert_eq!(err.status(), Some(429));
    assert_eq!(mock.seen().len(), 3);
}

#[tokio::test]
async fn remote_embedder_rejects_wrong_dimensions_and_counts() {
    let mock = Mock::scripted(vec![(StatusCode::OK, embedding(&[1.0, 2.0]))]);
    let addr = mock.start().await;
    let mut cfg = embedder_config(addr, "PARROT_TEST_UNSET_KEY");
    cfg.retries = 0;
    let embedder = RemoteEmbedder::new(cfg).unwrap();
    let err = embedder.embed("a").await.unwrap_err();
    assert!(err.to_string().contains("expected 8 dims, got 2"), "{err}");

    let err = embedder.embed_batch(&["a".into(), "b".into()]).await.unwrap_err();
    assert!(err.to_string().contains("expected 2 embeddings, got 1"), "{err}");
}

fn llm_config(addr: SocketAddr, key_env: &str) -> LlmConfig {
    LlmConfig {
        endpoint: format!("http://{addr}/v1"),
        api_key_env: key_env.into(),
        backoff_ms: 1,
        ..LlmConfig::default()
    }
}

fn completion(content: &str) -> Value {
    json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 120, "completion_tokens": 30, "total_tokens": 150}
    })
}

const GOOD_REPLY: &str = r#"{"target_victim":"Japanese Android users","http_header":{"User-Agent":"Mozilla/5.0 (Linux; Android 14; Pixel 8) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/131.0.0.0 Mobile Safari/537.36"},"ip_location":"Japan","network_provider":"Residential","reason":"successes were all Japanese residential"}"#;

#[tokio::test]
async fn chat_client_sends_both_messages_and_reads_usage() {
    let mock = Mock::scripted(vec![(StatusCode::OK, completion(GOOD_REPLY))]);
    let addr = mock.start().await;
    std::env::set_var("PARROT_TEST_CHAT_KEY", "sk-chat-secret");
    let chat = OpenAiChat::new(llm_config(addr, "PARROT_TEST_CHAT_KEY")).unwrap();
    let bundle = build_prompt("http://a.test/", &[], &[]);

    let reply = chat.complete(&bundle).await.unwrap();
    assert_eq!(reply.content, GOOD_REPLY);
    assert_eq!(reply.usage.unwrap().total_tokens, 150);

    let seen = &mock.seen()[0];
    assert_eq!(seen.path, "/v1/chat/completions");
    assert_eq!(seen.auth.as_deref(), Some("Bearer sk-chat-secret"));
    assert_eq!(seen.body["model"], "gpt-4o-mini");
    assert_eq!(seen.body["temperature"], 0.0);
    assert_eq!(seen.body["messages"][0], json!({"role": "system", "content": bundle.system_text}));
    assert_eq!(seen.body["messages"][1], json!({"role": "user", "content": bundle.user_text}));
    assert!(!format!("{chat:?}").contains("sk-chat-secret"));
}

#[tokio::test]
async fn chat_client_retries_server_errors_but_not_client_errors() {
    let mock = Mock::scripted(vec![
        (StatusCode::BAD_GATEWAY, json!({"error": "upstream"})),
        (StatusCode::OK, completion("{}")),
    ]);
    let addr = mock.start().await;
    let chat = OpenAiChat::new(llm_config(addr, "PARROT_TEST_UNSET_KEY")).unwrap();
    let bundle = build_prompt("http://a.test/", &[], &[]);
    assert_eq!(chat.complete(&bundle).await.unwrap().content, "{}");
    assert_eq!(mock.seen().len(), 2);

    let mock = Mock::scripted(vec![(StatusCode::UNAUTHORIZED, json!({"error": "bad key"}))]);
    let addr = mock.start().await;
    let chat = OpenAiChat::new(llm_config(addr, "PARROT_TEST_UNSET_KEY")).unwrap();
    match chat.complete(&bundle).await {
        Err(ChatError::Status { status: 401, body }) => assert!(body.contains("bad key")),
        other => panic!("expected a 401, got {other:?}"),
    }
    assert_eq!(mock.seen().len(), 1);

    let mock = Mock::scripted(vec![(StatusCode::OK, json!({"choices": []}))]);
    let addr = mock.start().await;
    let chat = OpenAiChat::new(llm_config(addr, "PARROT_TEST_UNSET_KEY")).unwrap();
    assert!(matches!(chat.complete(&bundle).await, Err(ChatError::Malformed(_))));
}

#[tokio::test]
async fn unparseable_reply_triggers_one_repair_request() {
    let mock = Mock::scripted(vec![
        (StatusCode::OK, completion("I think Japan would be best.")),
        (StatusCode::OK, completion(GOOD_REPLY)),
    ]);
    let addr = mock.start().await;
    let chat = OpenAiChat::new(llm_config(addr, "PARROT_TEST_UNSET_KEY")).unwrap();
    let bundle = build_prompt("http://a.test/", &[], &[]);
    let advice = request_profile(&chat, &bundle, 1).await.unwrap();
    assert!(advice.repaired);
    assert_eq!(advice.raw_replies.len(), 2);
    assert_eq!(advice.usage.len(), 2);
    assert_eq!(advice.recommendation.ip_location, "Japan");

    let seen = mock.seen();
    let first = seen[0].body["messages"][1]["content"].as_str().unwrap();
    let second = seen[1].body["messages"][1]["content"].as_str().unwrap();
    assert_eq!(first, bundle.user_text);
    assert_eq!(second, format!("{}{REPAIR_SUFFIX}", bundle.user_text));
}

const PAGE: &str = "<html><head><title>Kumo Post</title></head><body><h1>Track parcel</h1><form><input name=\"n\"></form></body></html>";

fn webdriver_mock(new_session: (StatusCode, Value)) -> Mock {
    Mock::routed(move |method, path, body| match (method.as_str(), path) {
        ("POST", "/session") => new_session.clone(),
        ("POST", "/session/s1/url") => (StatusCode::OK, json!({"value": null})),
        ("GET", "/session/s1/url") => (StatusCode::OK, json!({"value": "http://kumo.test/landing"})),
        ("POST", "/session/s1/execute/sync") if body["script"].as_str().unwrap().contains("outerHTML") => {
            (StatusCode::OK, json!({"value": PAGE}))
        }
        ("POST", "/session/s1/execute/sync") => (StatusCode::OK, json!({"value": {"name": "http://kumo.test/landing", "status": 200}})),
        ("GET", "/session/s1/screenshot") => {
            (StatusCode::OK, json!({"value": base64::engine::general_purpose::STANDARD.encode(b"\x89PNG")}))
        }
        ("DELETE", "/session/s1") => (StatusCode::OK, json!({"value": null})),
        _ => (StatusCode::NOT_FOUND, json!({"value": {"error": "unknown command", "message": path}})),
    })
}

fn driver(addr: SocketAddr) -> WebDriverBackend {
    WebDriverBackend::new(WebDriverConfig {
        endpoint: format!("http://{addr}"),
        browser_name: "chrome".into(),
        timeouts: Timeouts {
            connect: 2.0,
            nav: 5.0,
            settle: 0.01,
        },
        screenshot: true,
    })
    .unwrap()
}

fn plan(proxy: Option<String>) -> FetchPlan {
    let mut headers = HeaderList::new();
    headers.set("User-Agent", "Mozilla/5.0 (Linux; Android 14; Pixel 8) Mobile");
    headers.set("Accept-Language", "ja-JP,ja;q=0.9");
    headers.set("Sec-CH-UA-Mobile", "?1");
    FetchPlan {
        headers,
        proxy,
        environment: Default::default(),
    }
}

#[tokio::test]
async fn webdriver_session_captures_dom_status_and_screenshot() {
    let mock = webdriver_mock((StatusCode::OK, json!({"value": {"sessionId": "s1", "capabilities": {}}})));
    let addr = mock.start().await;
    // Any listening socket will do as the proxy; only reachability is checked.
    let proxy = format!("http://JP:Residential@{addr}");
    let result = driver(addr)
        .fetch(&Url::parse("http://kumo.test/").unwrap(), &plan(Some(proxy)))
        .await
        .unwrap();

    assert_eq!(result.error, None);
    assert_eq!(result.document, PAGE);
    assert!(result.html.visible_text.contains("Track parcel"));
    assert_eq!(result.final_url.as_deref(), Some("http://kumo.test/landing"));
    assert_eq!(result.network.responses.len(), 1);
    assert_eq!(result.network.responses[0].status, 200);
    assert_eq!(result.screenshot.as_deref(), Some(&b"\x89PNG"[..]));
    assert_eq!(result.warnings, vec!["header Sec-CH-UA-Mobile cannot be set through webdriver".to_string()]);

    let seen = mock.seen();
    let caps = &seen[0].body["capabilities"]["alwaysMatch"];
    let args: Vec<&str> = caps["goog:chromeOptions"]["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(args.contains(&"--user-agent=Mozilla/5.0 (Linux; Android 14; Pixel 8) Mobile"));
    assert!(args.contains(&"--lang=ja-JP"));
    assert_eq!(caps["proxy"], json!({"proxyType": "manual", "httpProxy": addr.to_string(), "sslProxy": addr.to_string()}));
    assert_eq!(seen[1].body, json!({"url": "http://kumo.test/"}));
    assert_eq!(seen.last().unwrap().method, Method::DELETE);
}

#[tokio::test]
async fn webdriver_failures_stay_inside_the_result() {
    let mock = webdriver_mock((
        StatusCode::INTERNAL_SERVER_ERROR,
        json!({"value": {"error": "session not created", "message": "no chrome binary"}}),
    ));
    let addr = mock.start().await;
    let result = driver(addr).fetch(&Url::parse("http://kumo.test/").unwrap(), &plan(None)).await.unwrap();
    assert_eq!(result.error.as_deref(), Some("new session: session not created: no chrome binary"));
    assert!(result.network.responses.is_empty());

    // A dead proxy is the one failure surfaced as an error.
    let dead = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap().local_addr().unwrap();
    let err = driver(addr)
        .fetch(&Url::parse("http://kumo.test/").unwrap(), &plan(Some(format!("http://user:pw@{dead}"))))
        .await
        .unwrap_err();
    match err {
        CrawlError::Proxy { proxy, .. } => assert!(!proxy.contains("pw"), "{proxy}"),
        other => panic!("expected a proxy error, got {other:?}"),
    }
}
