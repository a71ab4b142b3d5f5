use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine;
use serde_json::{json, Value};
use url::Url;

use super::plain::redact_proxy;
use super::{html, CrawlError, FetchBackend, FetchPlan, FetchResult, Timeouts};
use crate::records::{NetworkInfo, RequestEntry, ResponseEntry};

const DOM_SCRIPT: &str = "return document.documentElement ? document.documentElement.outerHTML : '';";
const NAV_TIMING_SCRIPT: &str = "const n = performance.getEntriesByType('navigation')[0]; \
     return n ? {name: n.name, status: n.responseStatus || 0} : null;";

#[derive(Debug, Clone)]
pub struct WebDriverConfig {
    pub endpoint: String,
    pub browser_name: String,
    pub timeouts: Timeouts,
    pub screenshot: bool,
}

/// Drives a browser through a W3C WebDriver endpoint, one session per
/// fetch. Only User-Agent and Accept-Language can be set on a browser, so
/// other layered headers are reported as warnings.
#[derive(Debug)]
pub struct WebDriverBackend {
    cfg: WebDriverConfig,
    client: reqwest::Client,
}

#[derive(Debug)]
struct WdError(String);

impl WebDriverBackend {
    pub fn new(cfg: WebDriverConfig) -> Result<Self, CrawlError> {
        cfg.timeouts.validate()?;
        Url::parse(&cfg.endpoint).map_err(|e| CrawlError::Config(format!("webdriver endpoint: {e}")))?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeouts.nav + cfg.timeouts.connect))
            .no_proxy()
            .build()
            .map_err(|e| CrawlError::Config(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    async fn call(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> Result<Value, WdError> {
        let mut req = self.client.request(method, self.url(path));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.map_err(|e| WdError(e.to_string()))?;
        let status = resp.status();
        let value: Value = resp.json().await.map_err(|e| WdError(e.to_string()))?;
        let inner = value.get("value").cloned().unwrap_or(Value::Null);
        if !status.is_success() {
            let error = inner["error"].as_str().unwrap_or("unknown error");
            let message = inner["message"].as_str().unwrap_or("");
            return Err(WdError(format!("{error}: {message}")));
        }
        Ok(inner)
    }

    fn capabilities(&self, plan: &FetchPlan) -> Value {
        let mut args = vec!["--headless=new".to_string(), "--incognito".to_string()];
        if let Some(ua) = plan.headers.get("User-Agent") {
            args.push(format!("--user-agent={ua}"));
        }
        let lang = plan.headers.get("Accept-Language").unwrap_or("en-US");
        if let Some(primary) = lang.split(',').next() {
            args.push(format!("--lang={}", primary.trim()));
        }
        let proxy = match plan.proxy.as_deref().and_then(|p| Url::parse(p).ok()) {
            Some(p) => {
                let hostport = format!("{}:{}", p.host_str().unwrap_or_default(), p.port_or_known_default().unwrap_or(8080));
                if p.scheme().starts_with("socks") {
                    json!({"proxyType": "manual", "socksProxy": hostport, "socksVersion": 5})
                } else {
                    json!({"proxyType": "manual", "httpProxy": hostport, "sslProxy": hostport})
                }
            }
            None => json!({"proxyType": "direct"}),
        };
        let nav_ms = (self.cfg.timeouts.nav * 1000.0) as u64;
        json!({
            "capabilities": {
                "alwaysMatch": {
                    "browserName": self.cfg.browser_name,
                    "acceptInsecureCerts": true,
                    "pageLoadStrategy": "normal",
                    "proxy": proxy,
                    "timeouts": {"pageLoad": nav_ms, "script": nav_ms, "implicit": 0},
                    "goog:chromeOptions": {
                        "args": args,
                        "prefs": {"intl.accept_languages": lang},
                    },
                    "goog:loggingPrefs": {"performance": "ALL"},
                }
            }
        })
    }

    async fn proxy_reachable(&self, proxy: &str) -> Result<(), CrawlError> {
        let url = Url::parse(proxy).map_err(|e| CrawlError::Config(format!("bad proxy url: {e}")))?;
        let host = url.host_str().unwrap_or_default().to_string();
        let port = url.port_or_known_default().unwrap_or(1080);
        let connect = tokio::net::TcpStream::connect((host.as_str(), port));
        match tokio::time::timeout(Duration::from_secs_f64(self.cfg.timeouts.connect), connect).await {
            Ok(Ok(_)) => Ok(()),
            Ok(Err(e)) => Err(CrawlError::Proxy {
                proxy: redact_proxy(proxy),
                message: e.to_string(),
            }),
            Err(_) => Err(CrawlError::Proxy {
                proxy: redact_proxy(proxy),
                message: "connect timed out".into(),
            }),
        }
    }

    async fn run_session(&self, session: &str, url: &Url, plan: &FetchPlan, result: &mut FetchResult) {
        let base = format!("/session/{session}");
        if let Err(WdError(e)) = self
            .call(reqwest::Method::POST, &format!("{base}/url"), Some(json!({"url": url.as_str()})))
            .await
        {
            result.error = Some(format!("navigation: {e}"));
        }
        tokio::time::sleep(Duration::from_secs_f64(self.cfg.timeouts.settle)).await;

        if let Ok(Value::String(current)) = self.call(reqwest::Method::GET, &format!("{base}/url"), None).await {
            if current != "about:blank" && !current.is_empty() {
                result.final_url = Some(current);
            }
        }
        match self
            .call(
                reqwest::Method::POST,
                &format!("{base}/execute/sync"),
                Some(json!({"script": DOM_SCRIPT, "args": []})),
            )
            .await
        {
            Ok(Value::String(dom)) => {
                result.html = html::extract(&dom);
                result.document = dom;
            }
            Ok(_) => result.warnings.push("dom capture returned no document".into()),
            Err(WdError(e)) => result.warnings.push(format!("dom capture: {e}")),
        }

        let log = self
            .call(reqwest::Method::POST, &format!("{base}/se/log"), Some(json!({"type": "performance"})))
            .await;
        let network = match log {
            Ok(Value::Array(entries)) => network_from_performance_log(&entries),
            _ => NetworkInfo::default(),
        };
        result.network = if network.requests.is_empty() {
            self.network_from_timing(&base, url, plan).await
        } else {
            network
        };
        if result.network.responses.is_empty() {
            result.final_url = None;
        } else if result.final_url.is_none() {
            result.final_url = result.network.final_response().map(|r| r.url.clone());
        }

        if self.cfg.screenshot {
            match self.call(reqwest::Method::GET, &format!("{base}/screenshot"), None).await {
                Ok(Value::String(b64)) => match base64::engine::general_purpose::STANDARD.decode(b64.as_bytes()) {
                    Ok(bytes) => result.screenshot = Some(bytes),
                    Err(e) => result.warnings.push(format!("screenshot: {e}")),
                },
                Ok(_) => result.warnings.push("screenshot: unexpected reply".into()),
                Err(WdError(e)) => result.warnings.push(format!("screenshot: {e}")),
            }
        }
    }

    // Without a performance log only the document request and its final
    // status are known.
    async fn network_from_timing(&self, base: &str, url: &Url, plan: &FetchPlan) -> NetworkInfo {
        let mut network = NetworkInfo {
            requests: vec![RequestEntry {
                id: 1,
                method: "GET".into(),
                url: url.to_string(),
                headers: plan.headers.to_map(),
            }],
            responses: Vec::new(),
        };
        let timing = self
            .call(
                reqwest::Method::POST,
                &format!("{base}/execute/sync"),
                Some(json!({"script": NAV_TIMING_SCRIPT, "args": []})),
            )
            .await;
        if let Ok(t) = timing {
            let status = t["status"].as_u64().unwrap_or(0);
            if (100..=599).contains(&status) {
                network.responses.push(ResponseEntry {
                    id: 1,
                    status: status as u16,
                    url: t["name"].as_str().unwrap_or(url.as_str()).to_string(),
                    headers: BTreeMap::new(),
                });
            }
        }
        network
    }
}

fn string_map(v: &Value) -> BTreeMap<String, String> {
    v.as_object()
        .map(|m| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
                .collect()
        })
        .unwrap_or_default()
}

/// Rebuilds the document request chain from Chrome DevTools performance
/// log entries. Redirect hops become separate request/response pairs.
pub(crate) fn network_from_performance_log(entries: &[Value]) -> NetworkInfo {
    let mut network = NetworkInfo::default();
    // DevTools request id -> our id of its latest hop
    let mut hops: BTreeMap<String, u32> = BTreeMap::new();
    let mut next_id = 1u32;
    for entry in entries {
        let Some(text) = entry["message"].as_str() else { continue };
        let Ok(msg) = serde_json::from_str::<Value>(text) else { continue };
        let msg = &msg["message"];
        let params = &msg["params"];
        let request_id = params["requestId"].as_str().unwrap_or_default().to_string();
        match msg["method"].as_str() {
            Some("Network.requestWillBeSent") if params["type"] == "Document" => {
                if let (Some(prev), Some(redirect)) = (hops.get(&request_id), params.get("redirectResponse")) {
                    if let Some(status) = redirect["status"].as_u64().filter(|s| (100..=599).contains(s)) {
                        network.responses.push(ResponseEntry {
                            id: *prev,
                            status: status as u16,
                            url: redirect["url"].as_str().unwrap_or_default().to_string(),
                            headers: string_map(&redirect["headers"]),
                        });
                    }
                }
                let req = &params["request"];
                network.requests.push(RequestEntry {
                    id: next_id,
                    method: req["method"].as_str().unwrap_or("GET").to_string(),
                    url: req["url"].as_str().unwrap_or_default().to_string(),
                    headers: string_map(&req["headers"]),
                });
                hops.insert(request_id, next_id);
                next_id += 1;
            }
            Some("Network.responseReceived") if params["type"] == "Document" => {
                let Some(&id) = hops.get(&request_id) else { continue };
                if network.responses.iter().any(|r| r.id == id) {
                    continue;
                }
                let resp = &params["response"];
                if let Some(status) = resp["status"].as_u64().filter(|s| (100..=599).contains(s)) {
                    network.responses.push(ResponseEntry {
                        id,
                        status: status as u16,
                        url: resp["url"].as_str().unwrap_or_default().to_string(),
                        headers: string_map(&resp["headers"]),
                    });
                }
            }
            _ => {}
        }
    }
    network.responses.sort_by_key(|r| r.id);
    network
}

#[async_trait]
impl FetchBackend for WebDriverBackend {
    async fn fetch(&self, url: &Url, plan: &FetchPlan) -> Result<FetchResult, CrawlError> {
        let started = Instant::now();
        if let Some(proxy) = &plan.proxy {
            self.proxy_reachable(proxy).await?;
        }
        let mut result = FetchResult {
            environment: plan.environment.clone(),
            ..FetchResult::default()
        };
        for (name, _) in plan.headers.iter() {
            if !name.eq_ignore_ascii_case("user-agent")
                && !name.eq_ignore_ascii_case("accept-language")
                && !name.eq_ignore_ascii_case("accept")
            {
                result.warnings.push(format!("header {name} cannot be set through webdriver"));
            }
        }
        let session = match self.call(reqwest::Method::POST, "/session", Some(self.capabilities(plan))).await {
            Ok(v) => match v["sessionId"].as_str() {
                Some(id) => id.to_string(),
                None => {
                    result.error = Some("webdriver returned no session id".into());
                    result.elapsed = started.elapsed().as_secs_f64();
                    return Ok(result);
                }
            },
            Err(WdError(e)) => {
                result.error = Some(format!("new session: {e}"));
                result.elapsed = started.elapsed().as_secs_f64();
                return Ok(result);
            }
        };
        self.run_session(&session, url, plan, &mut result).await;
        if let Err(WdError(e)) = self.call(reqwest::Method::DELETE, &format!("/session/{session}"), None).await {
            result.warnings.push(format!("closing session: {e}"));
        }
        result.elapsed = started.elapsed().as_secs_f64();
        Ok(result)
    }
}
