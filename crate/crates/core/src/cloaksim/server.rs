use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{CloakScenario, Corpus, FailContent, RequestFacts, SimVerdict, GEO_HEADER, NETWORK_HEADER};

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    /// Serve `/oracle/{id}` and `/log`.
    pub expose_test_endpoints: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            expose_test_endpoints: true,
        }
    }
}

/// One evaluated scenario request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRequest {
    pub scenario_id: String,
    pub headers: BTreeMap<String, String>,
    pub facts: RequestFacts,
    pub verdict: SimVerdict,
}

struct SimState {
    scenarios: HashMap<String, CloakScenario>,
    brands: HashMap<String, String>,
    port: u16,
    expose: bool,
    log: Mutex<Vec<SimRequest>>,
}

/// Handle to a running simulator. Dropping it stops the server.
pub struct SimServer {
    addr: SocketAddr,
    state: Arc<SimState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for SimServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimServer")
            .field("addr", &self.addr)
            .field("scenarios", &self.state.scenarios.len())
            .finish()
    }
}

impl SimServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn log(&self) -> Vec<SimRequest> {
        self.state.log.lock().expect("log poisoned").clone()
    }

    pub fn clear_log(&self) {
        self.state.log.lock().expect("log poisoned").clear();
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

fn header_str(headers: &HeaderMap, name: &str) -> Option<String> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
}

pub(crate) fn facts_from_headers(headers: &HeaderMap) -> RequestFacts {
    RequestFacts {
        user_agent: header_str(headers, header::USER_AGENT.as_str()),
        accept_language: header_str(headers, header::ACCEPT_LANGUAGE.as_str()),
        geo: header_str(headers, GEO_HEADER),
        network: header_str(headers, NETWORK_HEADER),
    }
}

fn html_response(status: StatusCode, banner: &str, body: String) -> Response {
    (
        status,
        [
            (header::CONTENT_TYPE, "text/html; charset=utf-8".to_string()),
            (header::SERVER, banner.to_string()),
        ],
        body,
    )
        .into_response()
}

async fn scenario(State(state): State<Arc<SimState>>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let Some(s) = state.scenarios.get(&id) else {
        return (StatusCode::NOT_FOUND, "unknown scenario").into_response();
    };
    let facts = facts_from_headers(&headers);
    let verdict = s.evaluate(&facts);
    state.log.lock().expect("log poisoned").push(SimRequest {
        scenario_id: id.clone(),
        headers: headers
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect(),
        facts,
        verdict,
    });
    match (verdict, &s.fail_content) {
        (SimVerdict::Pass, _) => html_response(StatusCode::OK, &s.server_banner, s.pass_content.clone()),
        (SimVerdict::Fail, FailContent::Decoy { html }) => html_response(StatusCode::OK, &s.server_banner, html.clone()),
        (SimVerdict::Fail, FailContent::Forbidden { html }) => {
            html_response(StatusCode::FORBIDDEN, &s.server_banner, html.clone())
        }
        (SimVerdict::Fail, FailContent::Redirect { host }) => (
            StatusCode::FOUND,
            [
                (header::LOCATION, format!("http://{host}:{}/", state.port)),
                (header::SERVER, s.server_banner.clone()),
            ],
        )
            .into_response(),
    }
}

#[derive(Serialize)]
struct OracleView<'a> {
    id: &'a str,
    family: &'a str,
    predicates: &'a [super::Predicate],
}

async fn oracle(State(state): State<Arc<SimState>>, Path(id): Path<String>) -> Response {
    if !state.expose {
        return StatusCode::NOT_FOUND.into_response();
    }
    match state.scenarios.get(&id) {
        Some(s) => Json(OracleView {
            id: &s.id,
            family: &s.family,
            predicates: &s.predicates,
        })
        .into_response(),
        None => (StatusCode::NOT_FOUND, "unknown scenario").into_response(),
    }
}

async fn log(State(state): State<Arc<SimState>>) -> Response {
    if !state.expose {
        return StatusCode::NOT_FOUND.into_response();
    }
    Json(state.log.lock().expect("log poisoned").clone()).into_response()
}

// Anything else is treated as a legitimate site, which is where redirects
// land.
async fn legit(State(state): State<Arc<SimState>>, headers: HeaderMap) -> Response {
    let host = header_str(&headers, header::HOST.as_str()).unwrap_or_default();
    let host = host.split(':').next().unwrap_or_default().to_ascii_lowercase();
    let brand = state.brands.get(&host).cloned().unwrap_or_else(|| host.clone());
    html_response(
        StatusCode::OK,
        "nginx",
        format!(
            "<!DOCTYPE html><html><head><title>{brand}</title></head><body><h1>Welcome to {brand}</h1>\
<p>Official website. We will never ask for your password by email or text message.</p></body></html>"
        ),
    )
}

/// Starts the simulator for a corpus.
pub async fn serve(corpus: &Corpus, opts: SimOptions) -> std::io::Result<SimServer> {
    let listener = tokio::net::TcpListener::bind((opts.bind, opts.port)).await?;
    let addr = listener.local_addr()?;
    let state = Arc::new(SimState {
        scenarios: corpus.scenarios.iter().map(|s| (s.id.clone(), s.clone())).collect(),
        brands: corpus.legit.iter().map(|l| (l.host.clone(), l.brand.clone())).collect(),
        port: addr.port(),
        expose: opts.expose_test_endpoints,
        log: Mutex::new(Vec::new()),
    });
    let app = Router::new()
        .route("/s/{id}", get(scenario))
        .route("/oracle/{id}", get(oracle))
        .route("/log", get(log))
        .fallback(legit)
        .with_state(state.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!(error = %e, "simulator stopped");
        }
    });
    Ok(SimServer {
        addr,
        state,
        shutdown: Some(tx),
        task: Some(task),
    })
}
