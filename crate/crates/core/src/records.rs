//! Crawl-record data model.
//!
//! A [`CrawlRecord`] holds the evidence gathered by one access to a URL,
//! grouped in four categories: domain (registration, DNS, TLS), network
//! (request/response log), HTML (visible text and tag skeleton) and the
//! crawling environment that produced it. Records are the unit that is
//! labeled, embedded, retrieved and persisted.
//!
//! Two text renderings exist. [`canonical_text`] is what gets embedded: a
//! key-sorted compact JSON rendering of one category that never contains the
//! record id, timestamp, label or environment. [`prompt_view`] is what an
//! LLM sees: registration, the first request and final response, and the
//! environment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use crate::jsonl::{self, JsonlError, Loaded};

pub type RecordId = u64;

/// Default character cap of [`prompt_view`].
pub const PROMPT_VIEW_CAP: usize = 4_000;

/// Appended to a prompt view that had to be cut.
pub const TRUNCATION_MARKER: &str = " [truncated]";

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("invalid domain name {0:?}")]
    InvalidDomain(String),
    #[error("network log: {0}")]
    InvalidNetwork(String),
    #[error("record {id}: label cannot change from {from:?} to {to:?}")]
    LabelTransition { id: RecordId, from: Label, to: Label },
    #[error("user profile has no User-Agent")]
    MissingUserAgent,
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Success,
    Failed,
    Unlabeled,
}

impl Default for Label {
    fn default() -> Self {
        Label::Unlabeled
    }
}

/// Ordered HTTP header list with case-insensitive lookup. Serializes as a
/// JSON object in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeaderList(Vec<(String, String)>);

impl HeaderList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Replaces an existing header in place (keeping its position) or
    /// appends a new one.
    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| k.eq_ignore_ascii_case(&name)) {
            Some(slot) => slot.1 = value,
            None => self.0.push((name, value)),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<String> {
        let pos = self.0.iter().position(|(k, _)| k.eq_ignore_ascii_case(name))?;
        Some(self.0.remove(pos).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.0.iter().cloned().collect()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for HeaderList {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let mut list = HeaderList::new();
        for (k, v) in iter {
            list.set(k, v);
        }
        list
    }
}

impl Serialize for HeaderList {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for HeaderList {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = HeaderList;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of header names to string values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<HeaderList, A::Error> {
                let mut list = HeaderList::new();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    list.set(k, v);
                }
                Ok(list)
            }
        }

        deserializer.deserialize_map(HeaderVisitor)
    }
}

/// One DNS answer, named after the DNS-over-HTTPS JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsAnswer {
    pub name: String,
    #[serde(rename = "type", default)]
    pub record_type: u16,
    #[serde(rename = "TTL")]
    pub ttl: u32,
    pub data: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsInfo {
    /// DNS RCODE; 0 is NOERROR, 3 is NXDOMAIN.
    #[serde(rename = "Status", default)]
    pub status: u32,
    #[serde(rename = "Answer", default)]
    pub answer: Vec<DnsAnswer>,
}

impl DnsInfo {
    pub const NXDOMAIN: u32 = 3;

    pub fn is_nxdomain(&self) -> bool {
        self.status == Self::NXDOMAIN
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub domain_name: String,
    #[serde(default)]
    pub registration: BTreeMap<String, String>,
    #[serde(default)]
    pub dns: DnsInfo,
    /// Certificate fields (issuer, subject, validity) as nested maps.
    #[serde(default)]
    pub tls: BTreeMap<String, Value>,
}

impl DomainInfo {
    /// Creates domain info for a host, lowercasing it. Rejects names that
    /// carry a scheme, path or port.
    pub fn for_host(host: &str) -> Result<Self, RecordError> {
        let name = host.trim().trim_end_matches('.').to_ascii_lowercase();
        if name.is_empty() || name.contains(['/', ':', '?', '#', ' ', '@']) {
            return Err(RecordError::InvalidDomain(host.to_string()));
        }
        Ok(Self {
            domain_name: name,
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestEntry {
    pub id: u32,
    pub method: String,
    pub url: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub id: u32,
    pub status: u16,
    pub url: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkInfo {
    #[serde(default)]
    pub requests: Vec<RequestEntry>,
    #[serde(default)]
    pub responses: Vec<ResponseEntry>,
}

impl NetworkInfo {
    /// Checks id uniqueness, response-to-request matching and status range.
    pub fn validate(&self) -> Result<(), RecordError> {
        let mut request_ids = std::collections::BTreeSet::new();
        for r in &self.requests {
            if !request_ids.insert(r.id) {
                return Err(RecordError::InvalidNetwork(format!("duplicate request id {}", r.id)));
            }
        }
        let mut response_ids = std::collections::BTreeSet::new();
        for r in &self.responses {
            if !response_ids.insert(r.id) {
                return Err(RecordError::InvalidNetwork(format!("duplicate response id {}", r.id)));
            }
            if !request_ids.contains(&r.id) {
                return Err(RecordError::InvalidNetwork(format!(
                    "response {} has no matching request",
                    r.id
                )));
            }
            if !(100..=599).contains(&r.status) {
                return Err(RecordError::InvalidNetwork(format!(
                    "response {} has status {}",
                    r.id, r.status
                )));
            }
        }
        Ok(())
    }

    pub fn first_request(&self) -> Option<&RequestEntry> {
        self.requests.iter().min_by_key(|r| r.id)
    }

    pub fn final_response(&self) -> Option<&ResponseEntry> {
        self.responses.iter().max_by_key(|r| r.id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtmlInfo {
    pub visible_text: String,
    pub tag_structure: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoLocation {
    pub country: String,
    #[serde(default)]
    pub city: String,
    #[serde(default)]
    pub region: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsnInfo {
    pub asn: String,
    pub name: String,
    #[serde(default)]
    pub domain: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub ip_geolocation: GeoLocation,
    pub asn: AsnInfo,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlRecord {
    pub id: RecordId,
    pub url: String,
    pub fetched_at: DateTime<Utc>,
    pub domain: DomainInfo,
    pub network: NetworkInfo,
    pub html: HtmlInfo,
    pub environment: EnvironmentInfo,
    #[serde(default)]
    pub label: Label,
}

impl CrawlRecord {
    /// Applies a label. Only `Unlabeled -> {Success, Failed}` is allowed;
    /// re-applying the current label is a no-op.
    pub fn set_label(&mut self, label: Label) -> Result<(), RecordError> {
        match (self.label, label) {
            (a, b) if a == b => Ok(()),
            (Label::Unlabeled, Label::Success | Label::Failed) => {
                self.label = label;
                Ok(())
            }
            (from, to) => Err(RecordError::LabelTransition { id: self.id, from, to }),
        }
    }
}

/// Header set, egress country and network type used for one crawl.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub http_header: HeaderList,
    pub ip_location: String,
    pub network_provider: String,
}

impl UserProfile {
    pub fn user_agent(&self) -> Option<&str> {
        self.http_header.get("User-Agent").filter(|ua| !ua.trim().is_empty())
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        self.user_agent().map(|_| ()).ok_or(RecordError::MissingUserAgent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Domain,
    Network,
    Html,
    Full,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Domain, Category::Network, Category::Html, Category::Full];
    /// The categories matched individually during candidate filtering.
    pub const EVIDENCE: [Category; 3] = [Category::Domain, Category::Network, Category::Html];
}

/// Deterministic text for embedding one evidence category of a record.
///
/// Keys are sorted, string values have their whitespace collapsed and empty
/// strings, lists and maps are dropped, so a category with nothing in it
/// renders as `{}`. `Full` is the three evidence categories joined by
/// newlines.
pub fn canonical_text(record: &CrawlRecord, category: Category) -> String {
    match category {
        Category::Domain => render_canonical(&record.domain),
        Category::Network => render_canonical(&record.network),
        Category::Html => render_canonical(&record.html),
        Category::Full => format!(
            "{}\n{}\n{}",
            canonical_text(record, Category::Domain),
            canonical_text(record, Category::Network),
            canonical_text(record, Category::Html)
        ),
    }
}

fn render_canonical<T: Serialize>(value: &T) -> String {
    // serde_json's Map is ordered by key, so to_value sorts every object.
    let value = serde_json::to_value(value).expect("record categories serialize to JSON");
    let normalized = normalize(value).unwrap_or_else(|| Value::Object(Map::new()));
    serde_json::to_string(&normalized).expect("JSON values serialize")
}

fn normalize(value: Value) -> Option<Value> {
    match value {
        Value::String(s) => {
            let collapsed = collapse_whitespace(&s);
            (!collapsed.is_empty()).then_some(Value::String(collapsed))
        }
        Value::Array(items) => {
            let items: Vec<Value> = items.into_iter().filter_map(normalize).collect();
            (!items.is_empty()).then_some(Value::Array(items))
        }
        Value::Object(map) => {
            let map: Map<String, Value> = map
                .into_iter()
                .filter_map(|(k, v)| normalize(v).map(|v| (k, v)))
                .collect();
            (!map.is_empty()).then_some(Value::Object(map))
        }
        Value::Null => None,
        other => Some(other),
    }
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The reduced rendering of a record that goes into an LLM prompt, capped
/// at [`PROMPT_VIEW_CAP`] characters.
pub fn prompt_view(record: &CrawlRecord) -> String {
    prompt_view_capped(record, PROMPT_VIEW_CAP)
}

/// Single-line JSON with `environment`, `main_communications` (first
/// request, final response) and `registration`. If the rendering exceeds
/// `cap` characters it is cut and [`TRUNCATION_MARKER`] appended, keeping
/// the total within `cap`.
pub fn prompt_view_capped(record: &CrawlRecord, cap: usize) -> String {
    let mut comms = Map::new();
    if let Some(req) = record.network.first_request() {
        comms.insert("request".into(), json!(req));
    }
    if let Some(resp) = record.network.final_response() {
        comms.insert("response".into(), json!(resp));
    }
    let view = json!({
        "environment": record.environment,
        "main_communications": comms,
        "registration": record.domain.registration,
    });
    let text = serde_json::to_string(&view).expect("JSON values serialize");
    truncate_chars(text, cap)
}

fn truncate_chars(text: String, cap: usize) -> String {
    if text.chars().count() <= cap {
        return text;
    }
    let keep = cap.saturating_sub(TRUNCATION_MARKER.chars().count());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Overwrites `path` with the records, one JSON object per line.
pub fn persist(path: &Path, records: &[CrawlRecord]) -> Result<(), RecordError> {
    Ok(jsonl::write_all(path, records)?)
}

/// Loads a record file. A malformed line is an error naming its line
/// number, except an unterminated final line, which is skipped and counted
/// in `truncated_tail`.
pub fn load(path: &Path) -> Result<Loaded<CrawlRecord>, RecordError> {
    Ok(jsonl::read(path)?)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use chrono::TimeZone;

    pub fn record(id: RecordId) -> CrawlRecord {
        let mut domain = DomainInfo::for_host("example.com").unwrap();
        domain.registration.insert("registrar".into(), "Example Registrar, Inc.".into());
        domain.registration.insert("creation_date".into(), "2025-01-30".into());
        domain.dns.answer.push(DnsAnswer {
            name: "example.com".into(),
            record_type: 1,
            ttl: 123,
            data: "192.0.2.0".into(),
        });
        domain.tls.insert("issuer".into(), json!({"O": "ExampleCert"}));
        domain.tls.insert("subject".into(), json!({"CN": "example.com"}));
        let headers = |ua: &str| BTreeMap::from([("User-Agent".to_string(), ua.to_string())]);
        CrawlRecord {
            id,
            url: "https://example.com/".into(),
            fetched_at: Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap(),
            domain,
            network: NetworkInfo {
                requests: (1..=3)
                    .map(|i| RequestEntry {
                        id: i,
                        method: "GET".into(),
                        url: format!("https://example.com/{i}"),
                        headers: headers("Mozilla/5.0"),
                    })
                    .collect(),
                responses: (1..=3)
                    .map(|i| ResponseEntry {
                        id: i,
                        status: if i < 3 { 302 } else { 200 },
                        url: format!("https://example.com/{i}"),
                        headers: BTreeMap::from([("server".to_string(), "nginx".to_string())]),
                    })
                    .collect(),
            },
            html: HtmlInfo {
                visible_text: "403 Forbidden nginx/1.26.2 You do not have permission to access this resource.".into(),
                tag_structure: "<html><head><title></title></head><body><h1></h1></body></html>".into(),
            },
            environment: EnvironmentInfo {
                ip_geolocation: GeoLocation {
                    country: "US".into(),
                    city: "Sample City".into(),
                    region: "Sample".into(),
                },
                asn: AsnInfo {
                    asn: "AS1234".into(),
                    name: "Example Business".into(),
                    domain: "examplebusiness.example".into(),
                },
                language: "en-US".into(),
            },
            label: Label::Unlabeled,
        }
    }
}
