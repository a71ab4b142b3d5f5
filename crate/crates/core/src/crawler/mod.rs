//! Page fetching and evidence collection.
//!
//! Two interchangeable [`FetchBackend`]s are provided: [`PlainHttpBackend`]
//! issues HTTP requests directly and never runs scripts, and
//! [`WebDriverBackend`] drives a browser through a W3C WebDriver endpoint.

use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::catalog::{layered_headers, CatalogEntry, ProxyMap};
use crate::records::{EnvironmentInfo, HeaderList, HtmlInfo, NetworkInfo};

mod domain;
pub mod html;
mod plain;
mod webdriver;

pub use domain::{
    collect_domain_info, parse_whois, DnsLookup, DohResolver, DomainCollectors, DomainConfig, DomainReport,
    NullDomainSource, OpensslProbe, RegistrationLookup, StaticDomainSource, TlsProbe, WhoisClient,
};
pub use plain::{HostOverride, PlainHttpBackend, PlainHttpConfig, SuffixResolver};
pub use webdriver::{WebDriverBackend, WebDriverConfig};

/// Redirect hops followed before giving up.
pub const MAX_REDIRECTS: usize = 15;

#[derive(Debug, thiserror::Error)]
pub enum CrawlError {
    #[error("url {0:?} has no host")]
    NoHost(String),
    #[error("proxy {proxy} unreachable: {message}")]
    Proxy { proxy: String, message: String },
    #[error("fetch backend misconfigured: {0}")]
    Config(String),
}

/// Per-access timeouts in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    pub connect: f64,
    pub nav: f64,
    /// Wait after page load before the DOM is captured (browser only).
    pub settle: f64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            connect: 10.0,
            nav: 30.0,
            settle: 5.0,
        }
    }
}

impl Timeouts {
    pub fn validate(&self) -> Result<(), CrawlError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.connect) && ok(self.nav) && ok(self.settle) {
            Ok(())
        } else {
            Err(CrawlError::Config(format!("timeouts must be positive: {self:?}")))
        }
    }
}

/// What to send and where to send it from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchPlan {
    pub headers: HeaderList,
    /// Proxy URL; `None` egresses directly.
    pub proxy: Option<String>,
    pub environment: EnvironmentInfo,
}

#[derive(Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FetchResult {
    pub network: NetworkInfo,
    pub html: HtmlInfo,
    /// URL of the last response; absent when nothing was received.
    pub final_url: Option<String>,
    /// Final document as captured (post-script for the browser backend).
    #[serde(default)]
    pub document: String,
    #[serde(skip)]
    pub screenshot: Option<Vec<u8>>,
    pub environment: EnvironmentInfo,
    pub elapsed: f64,
    /// Why the access ended early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl fmt::Debug for FetchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FetchResult")
            .field("final_url", &self.final_url)
            .field("requests", &self.network.requests.len())
            .field("responses", &self.network.responses.len())
            .field("visible_text", &self.html.visible_text.chars().take(80).collect::<String>())
            .field("screenshot", &self.screenshot.as_ref().map(Vec::len))
            .field("elapsed", &self.elapsed)
            .field("error", &self.error)
            .finish()
    }
}

impl FetchResult {
    pub(crate) fn failed(environment: EnvironmentInfo, error: String) -> Self {
        Self {
            environment,
            error: Some(error),
            ..Self::default()
        }
    }

    pub fn final_status(&self) -> Option<u16> {
        self.network.final_response().map(|r| r.status)
    }
}

#[async_trait]
pub trait FetchBackend: Send + Sync + fmt::Debug {
    /// Fetches `url`. Page-level failures are reported inside the result;
    /// only an unreachable proxy is an error.
    async fn fetch(&self, url: &Url, plan: &FetchPlan) -> Result<FetchResult, CrawlError>;
}

/// Backend selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    /// `plain` or `browser`.
    pub kind: String,
    pub timeouts: Timeouts,
    pub max_redirects: usize,
    pub host_overrides: Vec<HostOverride>,
    pub webdriver_url: String,
    pub browser_name: String,
    pub screenshot: bool,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            kind: "plain".into(),
            timeouts: Timeouts::default(),
            max_redirects: MAX_REDIRECTS,
            host_overrides: Vec::new(),
            webdriver_url: "http://127.0.0.1:4444".into(),
            browser_name: "chrome".into(),
            screenshot: true,
        }
    }
}

impl FetchConfig {
    pub fn build(&self) -> Result<Arc<dyn FetchBackend>, CrawlError> {
        self.timeouts.validate()?;
        match self.kind.as_str() {
            "plain" => Ok(Arc::new(PlainHttpBackend::new(PlainHttpConfig {
                timeouts: self.timeouts,
                max_redirects: self.max_redirects,
                host_overrides: self.host_overrides.clone(),
                ..PlainHttpConfig::default()
            })?)),
            "browser" => Ok(Arc::new(WebDriverBackend::new(WebDriverConfig {
                endpoint: self.webdriver_url.clone(),
                browser_name: self.browser_name.clone(),
                timeouts: self.timeouts,
                screenshot: self.screenshot,
            })?)),
            other => Err(CrawlError::Config(format!("unknown fetch backend {other:?}"))),
        }
    }
}

/// The plan for accessing through `entry`: its headers with `extra`
/// layered on top, and its egress from the proxy map.
pub fn plan_for(entry: &CatalogEntry, extra: &HeaderList, proxies: &ProxyMap) -> Result<FetchPlan, CrawlError> {
    let egress = proxies
        .for_entry(entry)
        .ok_or_else(|| CrawlError::Config(format!("no egress for {}", entry.proxy_ref)))?;
    let headers = layered_headers(entry, extra);
    let language = headers
        .get("Accept-Language")
        .and_then(|v| v.split([',', ';']).next())
        .unwrap_or_default()
        .trim()
        .to_string();
    Ok(FetchPlan {
        environment: egress.environment(entry.location, &language),
        proxy: egress.proxy_url().map(str::to_string),
        headers,
    })
}

/// Fetches `url` through a catalog entry.
pub async fn profiled_access(
    url: &Url,
    entry: &CatalogEntry,
    extra: &HeaderList,
    backend: &dyn FetchBackend,
    proxies: &ProxyMap,
) -> Result<FetchResult, CrawlError> {
    url.host_str().ok_or_else(|| CrawlError::NoHost(url.to_string()))?;
    let plan = plan_for(entry, extra, proxies)?;
    backend.fetch(url, &plan).await
}

/// The unprofiled first look at a URL, made with the Standard entry.
pub async fn preliminary_access(
    url: &Url,
    standard: &CatalogEntry,
    backend: &dyn FetchBackend,
    proxies: &ProxyMap,
) -> Result<FetchResult, CrawlError> {
    profiled_access(url, standard, &HeaderList::new(), backend, proxies).await
}
