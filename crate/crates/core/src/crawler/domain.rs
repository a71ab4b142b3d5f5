use std::collections::BTreeMap;
use std::fmt;
use std::net::ToSocketAddrs;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use url::{Host, Url};

use super::CrawlError;
use crate::records::{DnsInfo, DomainInfo};

#[async_trait]
pub trait RegistrationLookup: Send + Sync + fmt::Debug {
    async fn registration(&self, domain: &str) -> Result<BTreeMap<String, String>, String>;
}

#[async_trait]
pub trait DnsLookup: Send + Sync + fmt::Debug {
    async fn resolve(&self, host: &str) -> Result<DnsInfo, String>;
}

#[async_trait]
pub trait TlsProbe: Send + Sync + fmt::Debug {
    async fn certificate(&self, host: &str, port: u16) -> Result<BTreeMap<String, Value>, String>;
}

#[derive(Debug, Clone)]
pub struct DomainCollectors {
    pub registration: Arc<dyn RegistrationLookup>,
    pub dns: Arc<dyn DnsLookup>,
    pub tls: Arc<dyn TlsProbe>,
}

impl DomainCollectors {
    pub fn from_source<S>(source: Arc<S>) -> Self
    where
        S: RegistrationLookup + DnsLookup + TlsProbe + 'static,
    {
        Self {
            registration: source.clone(),
            dns: source.clone(),
            tls: source,
        }
    }

    pub fn live(cfg: &DomainConfig) -> Result<Self, CrawlError> {
        let timeout = Duration::from_secs_f64(cfg.timeout_secs);
        Ok(Self {
            registration: Arc::new(WhoisClient::new(&cfg.whois_server, timeout)),
            dns: Arc::new(DohResolver::new(&cfg.doh_endpoint, timeout)?),
            tls: Arc::new(OpensslProbe::new(timeout)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    /// `live` queries WHOIS, DNS-over-HTTPS and the TLS endpoint; `none`
    /// skips collection; `corpus` reads fixtures from `corpus_path`.
    pub source: String,
    pub whois_server: String,
    pub doh_endpoint: String,
    pub timeout_secs: f64,
    pub corpus_path: Option<std::path::PathBuf>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            source: "live".into(),
            whois_server: "whois.iana.org:43".into(),
            doh_endpoint: "https://dns.google/resolve".into(),
            timeout_secs: 10.0,
            corpus_path: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub info: DomainInfo,
    pub warnings: Vec<String>,
}

/// Gathers registration, DNS and certificate data for the URL's host.
/// Collector failures leave their field empty and add a warning.
pub async fn collect_domain_info(url: &Url, collectors: &DomainCollectors) -> Result<DomainReport, CrawlError> {
    let host = url.host().ok_or_else(|| CrawlError::NoHost(url.to_string()))?;
    let port = url.port_or_known_default().unwrap_or(443);
    let https = url.scheme() == "https";
    let mut warnings = Vec::new();
    let (name, is_ip) = match &host {
        Host::Domain(d) => (d.trim_end_matches('.').to_ascii_lowercase(), false),
        Host::Ipv4(ip) => (ip.to_string(), true),
        Host::Ipv6(ip) => (ip.to_string(), true),
    };
    let mut info = DomainInfo {
        domain_name: name.clone(),
        ..DomainInfo::default()
    };
    if is_ip {
        warnings.push("registration: IP literal has no registrable domain".to_string());
        warnings.push("dns: IP literal, nothing to resolve".to_string());
        if https {
            match collectors.tls.certificate(&name, port).await {
                Ok(tls) => info.tls = tls,
                Err(e) => warnings.push(format!("tls: {e}")),
            }
        }
        return Ok(DomainReport { info, warnings });
    }
    let registrable = psl::domain_str(&name).unwrap_or(&name).to_string();
    let tls_fut = async {
        if https {
            Some(collectors.tls.certificate(&name, port).await)
        } else {
            None
        }
    };
    let (reg, dns, tls) = tokio::join!(
        collectors.registration.registration(&registrable),
        collectors.dns.resolve(&name),
        tls_fut
    );
    match reg {
        Ok(r) => info.registration = r,
        Err(e) => warnings.push(format!("registration: {e}")),
    }
    match dns {
        Ok(d) => info.dns = d,
        Err(e) => warnings.push(format!("dns: {e}")),
    }
    match tls {
        Some(Ok(t)) => info.tls = t,
        Some(Err(e)) => warnings.push(format!("tls: {e}")),
        None => {}
    }
    Ok(DomainReport { info, warnings })
}

/// Port-43 WHOIS client that follows one `refer:` hop.
#[derive(Debug, Clone)]
pub struct WhoisClient {
    server: String,
    timeout: Duration,
}

impl WhoisClient {
    pub fn new(server: &str, timeout: Duration) -> Self {
        Self {
            server: server.to_string(),
            timeout,
        }
    }

    async fn query(&self, server: &str, domain: &str) -> Result<String, String> {
        let addr = if server.contains(':') {
            server.to_string()
        } else {
            format!("{server}:43")
        };
        let work = async {
            let mut stream = tokio::net::TcpStream::connect(&addr).await.map_err(|e| format!("{addr}: {e}"))?;
            stream
                .write_all(format!("{domain}\r\n").as_bytes())
                .await
                .map_err(|e| format!("{addr}: {e}"))?;
            let mut buf = Vec::new();
            stream.read_to_end(&mut buf).await.map_err(|e| format!("{addr}: {e}"))?;
            Ok(String::from_utf8_lossy(&buf).into_owned())
        };
        tokio::time::timeout(self.timeout, work)
            .await
            .map_err(|_| format!("{addr}: timed out"))?
    }
}

/// Parses `Key: Value` lines into snake_case keys. The first occurrence of
/// a key wins, except name servers, which are joined.
pub fn parse_whois(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('%') || line.starts_with('#') || line.starts_with(">>>") {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else { continue };
        let value = value.trim();
        if value.is_empty() || key.len() > 48 {
            continue;
        }
        let key: String = key
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect::<String>()
            .split('_')
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        if key.is_empty() {
            continue;
        }
        if key == "name_server" || key == "nserver" {
            out.entry("name_server".to_string())
                .and_modify(|v: &mut String| {
                    v.push(' ');
                    v.push_str(&value.to_lowercase());
                })
                .or_insert_with(|| value.to_lowercase());
        } else {
            out.entry(key).or_insert_with(|| value.to_string());
        }
    }
    out
}

#[async_trait]
impl RegistrationLookup for WhoisClient {
    async fn registration(&self, domain: &str) -> Result<BTreeMap<String, String>, String> {
        let first = self.query(&self.server, domain).await?;
        let first_fields = parse_whois(&first);
        let text = match first_fields.get("refer").or_else(|| first_fields.get("whois")) {
            Some(next) if !next.eq_ignore_ascii_case(&self.server) => match self.query(next, domain).await {
                Ok(t) => t,
                Err(e) => {
                    tracing::debug!(error = %e, "whois referral failed, keeping first answer");
                    first
                }
            },
            _ => first,
        };
        let mut fields = parse_whois(&text);
        if fields.is_empty() {
            return Err("no registration data".into());
        }
        fields.remove("refer");
        Ok(fields)
    }
}

/// Resolver speaking the JSON DNS-over-HTTPS API (`?name=…&type=A`).
#[derive(Debug, Clone)]
pub struct DohResolver {
    endpoint: String,
    client: reqwest::Client,
}

impl DohResolver {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, CrawlError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| CrawlError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            client,
        })
    }
}

#[async_trait]
impl DnsLookup for DohResolver {
    async fn resolve(&self, host: &str) -> Result<DnsInfo, String> {
        let mut url = Url::parse(&self.endpoint).map_err(|e| format!("resolver endpoint: {e}"))?;
        url.query_pairs_mut().append_pair("name", host).append_pair("type", "A");
        let resp = self
            .client
            .get(url)
            .header("accept", "application/dns-json")
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("resolver returned HTTP {}", resp.status()));
        }
        resp.json::<DnsInfo>().await.map_err(|e| e.to_string())
    }
}

/// Fetches the peer certificate with an unverified TLS handshake.
#[derive(Debug, Clone)]
pub struct OpensslProbe {
    timeout: Duration,
}

impl OpensslProbe {
    pub fn new(timeout: Duration) -> Self {
        Self { timeout }
    }
}

fn name_map(name: &openssl::x509::X509NameRef) -> Value {
    let mut map = serde_json::Map::new();
    for entry in name.entries() {
        let key = entry.object().nid().short_name().unwrap_or("?").to_string();
        let value = String::from_utf8_lossy(entry.data().as_slice()).into_owned();
        map.insert(key, Value::String(value));
    }
    Value::Object(map)
}

/// Certificate fields as stored in `DomainInfo::tls`.
pub fn certificate_fields(cert: &openssl::x509::X509Ref) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    out.insert("issuer".into(), name_map(cert.issuer_name()));
    out.insert("subject".into(), name_map(cert.subject_name()));
    out.insert("not_before".into(), Value::String(cert.not_before().to_string()));
    out.insert("not_after".into(), Value::String(cert.not_after().to_string()));
    if let Ok(serial) = cert.serial_number().to_bn().and_then(|b| b.to_hex_str().map(|s| s.to_string())) {
        out.insert("serial".into(), Value::String(serial));
    }
    if let Some(sans) = cert.subject_alt_names() {
        let names: Vec<Value> = sans
            .iter()
            .filter_map(|n| n.dnsname().map(|d| Value::String(d.to_string())))
            .collect();
        if !names.is_empty() {
            out.insert("subject_alt_names".into(), Value::Array(names));
        }
    }
    out
}

#[async_trait]
impl TlsProbe for OpensslProbe {
    async fn certificate(&self, host: &str, port: u16) -> Result<BTreeMap<String, Value>, String> {
        let host = host.to_string();
        let timeout = self.timeout;
        tokio::task::spawn_blocking(move || {
            let addr = (host.as_str(), port)
                .to_socket_addrs()
                .map_err(|e| e.to_string())?
                .next()
                .ok_or_else(|| format!("{host}: no address"))?;
            let stream = std::net::TcpStream::connect_timeout(&addr, timeout).map_err(|e| e.to_string())?;
            stream.set_read_timeout(Some(timeout)).map_err(|e| e.to_string())?;
            stream.set_write_timeout(Some(timeout)).map_err(|e| e.to_string())?;
            let mut builder =
                openssl::ssl::SslConnector::builder(openssl::ssl::SslMethod::tls()).map_err(|e| e.to_string())?;
            builder.set_verify(openssl::ssl::SslVerifyMode::NONE);
            let mut config = builder.build().configure().map_err(|e| e.to_string())?;
            config.set_verify_hostname(false);
            let tls = config.connect(&host, stream).map_err(|e| e.to_string())?;
            let cert = tls
                .ssl()
                .peer_certificate()
                .ok_or_else(|| "no peer certificate".to_string())?;
            Ok(certificate_fields(&cert))
        })
        .await
        .map_err(|e| e.to_string())?
    }
}

/// Collects nothing and reports nothing; for runs without domain lookups.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullDomainSource;

#[async_trait]
impl RegistrationLookup for NullDomainSource {
    async fn registration(&self, _domain: &str) -> Result<BTreeMap<String, String>, String> {
        Ok(BTreeMap::new())
    }
}

#[async_trait]
impl DnsLookup for NullDomainSource {
    async fn resolve(&self, _host: &str) -> Result<DnsInfo, String> {
        Ok(DnsInfo::default())
    }
}

#[async_trait]
impl TlsProbe for NullDomainSource {
    async fn certificate(&self, _host: &str, _port: u16) -> Result<BTreeMap<String, Value>, String> {
        Ok(BTreeMap::new())
    }
}

/// Fixed domain data keyed by host name, for offline runs and tests.
/// Unknown hosts resolve to NXDOMAIN.
#[derive(Debug, Clone, Default)]
pub struct StaticDomainSource {
    hosts: BTreeMap<String, DomainInfo>,
}

impl StaticDomainSource {
    pub fn new(infos: impl IntoIterator<Item = DomainInfo>) -> Self {
        Self {
            hosts: infos.into_iter().map(|i| (i.domain_name.clone(), i)).collect(),
        }
    }

    pub fn insert(&mut self, info: DomainInfo) {
        self.hosts.insert(info.domain_name.clone(), info);
    }

    fn find(&self, name: &str) -> Option<&DomainInfo> {
        self.hosts.get(&name.trim_end_matches('.').to_ascii_lowercase())
    }
}

#[async_trait]
impl RegistrationLookup for StaticDomainSource {
    async fn registration(&self, domain: &str) -> Result<BTreeMap<String, String>, String> {
        self.find(domain)
            .map(|i| i.registration.clone())
            .ok_or_else(|| format!("no registration data for {domain}"))
    }
}

#[async_trait]
impl DnsLookup for StaticDomainSource {
    async fn resolve(&self, host: &str) -> Result<DnsInfo, String> {
        Ok(self.find(host).map(|i| i.dns.clone()).unwrap_or(DnsInfo {
            status: DnsInfo::NXDOMAIN,
            answer: Vec::new(),
        }))
    }
}

#[async_trait]
impl TlsProbe for StaticDomainSource {
    async fn certificate(&self, host: &str, _port: u16) -> Result<BTreeMap<String, Value>, String> {
        self.find(host)
            .map(|i| i.tls.clone())
            .filter(|t| !t.is_empty())
            .ok_or_else(|| format!("no certificate for {host}"))
    }
}
