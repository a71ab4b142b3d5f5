use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderName, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use base64::Engine;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{GEO_HEADER, NETWORK_HEADER};

const HOP_BY_HOP: &[&str] = &[
    "connection",
    "keep-alive",
    "proxy-authorization",
    "proxy-authenticate",
    "proxy-connection",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "content-length",
];

#[derive(Clone)]
struct ShimState {
    upstream: SocketAddr,
    client: reqwest::Client,
}

/// A plain-HTTP forward proxy in front of the simulator. The proxy
/// credentials `ISO2:Network` become `X-Sim-Geo` and `X-Sim-Network`.
pub struct ShimServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for ShimServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShimServer").field("addr", &self.addr).finish()
    }
}

impl ShimServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
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

impl Drop for ShimServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Decodes `Basic base64(user:pass)`.
pub(crate) fn basic_credentials(value: &str) -> Option<(String, String)> {
    let encoded = value.trim().strip_prefix("Basic ").or_else(|| value.trim().strip_prefix("basic "))?;
    let decoded = base64::engine::general_purpose::STANDARD.decode(encoded.trim()).ok()?;
    let text = String::from_utf8(decoded).ok()?;
    let (user, pass) = text.split_once(':')?;
    Some((user.to_string(), pass.to_string()))
}

async fn forward(State(state): State<ShimState>, req: Request) -> Response {
    if req.method() == Method::CONNECT {
        return (StatusCode::METHOD_NOT_ALLOWED, "CONNECT is not supported").into_response();
    }
    let (parts, body) = req.into_parts();
    let authority = parts
        .uri
        .authority()
        .map(|a| a.to_string())
        .or_else(|| parts.headers.get(header::HOST).and_then(|h| h.to_str().ok()).map(str::to_string));
    let path = parts.uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
    let target = format!("http://{}{}", state.upstream, path);
    let credentials = parts
        .headers
        .get(header::PROXY_AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(basic_credentials);

    let mut headers = HeaderMap::new();
    for (name, value) in &parts.headers {
        let n = name.as_str();
        if HOP_BY_HOP.contains(&n) || n == GEO_HEADER || n == NETWORK_HEADER || name == header::HOST {
            continue;
        }
        headers.append(name.clone(), value.clone());
    }
    if let Some(host) = authority.and_then(|a| a.parse().ok()) {
        headers.insert(header::HOST, host);
    }
    if let Some((geo, network)) = credentials {
        if let (Ok(g), Ok(n)) = (geo.parse(), network.parse()) {
            headers.insert(HeaderName::from_static(GEO_HEADER), g);
            headers.insert(HeaderName::from_static(NETWORK_HEADER), n);
        }
    }
    let body = match axum::body::to_bytes(body, 10 * 1024 * 1024).await {
        Ok(b) => b,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    let upstream = state
        .client
        .request(parts.method.clone(), target)
        .headers(headers)
        .body(body)
        .send()
        .await;
    let resp = match upstream {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_GATEWAY, e.to_string()).into_response(),
    };
    let mut builder = Response::builder().status(resp.status());
    for (name, value) in resp.headers() {
        if !HOP_BY_HOP.contains(&name.as_str()) {
            builder = builder.header(name, value);
        }
    }
    match resp.bytes().await {
        Ok(bytes) => builder
            .body(Body::from(bytes))
            .unwrap_or_else(|e| (StatusCode::BAD_GATEWAY, e.to_string()).into_response()),
        Err(e) => (StatusCode::BAD_GATEWAY, e.to_string()).into_response(),
    }
}

/// Starts the shim on a free loopback port, forwarding to `upstream`.
pub async fn start_shim(upstream: SocketAddr) -> std::io::Result<ShimServer> {
    start_shim_on(upstream, SocketAddr::from(([127, 0, 0, 1], 0))).await
}

pub async fn start_shim_on(upstream: SocketAddr, bind: SocketAddr) -> std::io::Result<ShimServer> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let client = reqwest::Client::builder()
        .no_proxy()
        .redirect(reqwest::redirect::Policy::none())
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(std::io::Error::other)?;
    let app = Router::new().fallback(forward).with_state(ShimState { upstream, client });
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!(error = %e, "proxy shim stopped");
        }
    });
    Ok(ShimServer {
        addr,
        shutdown: Some(tx),
        task: Some(task),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_basic_credentials() {
        // base64("JP:Residential")
        assert_eq!(
            basic_credentials("Basic SlA6UmVzaWRlbnRpYWw="),
            Some(("JP".to_string(), "Residential".to_string()))
        );
        assert_eq!(basic_credentials("Bearer abc"), None);
        assert_eq!(basic_credentials("Basic !!!"), None);
    }
}
