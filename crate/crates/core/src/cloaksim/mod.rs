//! A cloaking phishing-site simulator for closed-loop testing.
//!
//! Each [`CloakScenario`] serves its phishing page only when every predicate
//! holds for the incoming request. Egress country and network type are read
//! from `X-Sim-Geo` / `X-Sim-Network`, which the forwarding proxy from
//! [`start_shim`] injects from its proxy credentials.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogEntry, Location, NetworkType, ProxyMap};
use crate::records::DomainInfo;

mod corpus;
mod server;
mod shim;

pub use corpus::{generate_corpus, token_jaccard, Corpus, FAMILY_COUNT};
pub use server::{serve, SimOptions, SimRequest, SimServer};
pub use shim::{start_shim, start_shim_on, ShimServer};

pub const GEO_HEADER: &str = "x-sim-geo";
pub const NETWORK_HEADER: &str = "x-sim-network";
pub const MARKER_PREFIX: &str = "SIM-PHISH-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    UserAgent,
    AcceptLanguage,
    GeoCountry,
    NetworkType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Contains,
    Equals,
    Matches,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: Field,
    pub op: Op,
    pub value: String,
}

/// The request attributes predicates are evaluated against.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestFacts {
    pub user_agent: Option<String>,
    pub accept_language: Option<String>,
    pub geo: Option<String>,
    pub network: Option<String>,
}

impl RequestFacts {
    /// Facts a request through `entry` presents once the shim has tagged it.
    pub fn for_entry(entry: &CatalogEntry) -> Self {
        Self {
            user_agent: Some(entry.user_agent.clone()),
            accept_language: entry.header_set.get("Accept-Language").map(str::to_string),
            geo: Some(entry.location.iso2().to_string()),
            network: Some(entry.network.name().to_string()),
        }
    }

    fn get(&self, field: Field) -> Option<&str> {
        match field {
            Field::UserAgent => self.user_agent.as_deref(),
            Field::AcceptLanguage => self.accept_language.as_deref(),
            Field::GeoCountry => self.geo.as_deref(),
            Field::NetworkType => self.network.as_deref(),
        }
    }
}

impl Predicate {
    /// Absent request attributes never satisfy a predicate. `contains` is
    /// case-sensitive, `equals` ignores ASCII case, `matches` is a regex.
    pub fn holds(&self, facts: &RequestFacts) -> bool {
        let Some(actual) = facts.get(self.field) else {
            return false;
        };
        match self.op {
            Op::Contains => actual.contains(&self.value),
            Op::Equals => actual.trim().eq_ignore_ascii_case(self.value.trim()),
            Op::Matches => regex::Regex::new(&self.value).map(|r| r.is_match(actual)).unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailContent {
    /// A harmless page served with status 200.
    Decoy { html: String },
    /// 302 to `http://{host}:{port}/` on the simulator's own port.
    Redirect { host: String },
    /// An nginx-style 403 page.
    Forbidden { html: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakScenario {
    pub id: String,
    pub family: String,
    /// Host name the scenario is published under.
    pub host: String,
    pub predicates: Vec<Predicate>,
    pub pass_content: String,
    pub fail_content: FailContent,
    /// `Server` response header.
    pub server_banner: String,
    /// Registration and DNS fixtures for the host.
    pub domain: DomainInfo,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario {0} has no predicates")]
    NoPredicates(String),
    #[error("scenario {id}: invalid pattern {pattern:?}")]
    BadPattern { id: String, pattern: String },
    #[error("scenario {0}: pass content lacks its marker")]
    MissingMarker(String),
    #[error("scenario {0}: fail content carries a marker")]
    LeakedMarker(String),
    #[error("duplicate scenario id {0}")]
    DuplicateId(String),
    #[error("{0}")]
    Io(String),
}

impl CloakScenario {
    pub fn marker(&self) -> String {
        format!("{MARKER_PREFIX}{}", self.id)
    }

    /// Conjunction of all predicates.
    pub fn evaluate(&self, facts: &RequestFacts) -> SimVerdict {
        if self.predicates.iter().all(|p| p.holds(facts)) {
            SimVerdict::Pass
        } else {
            SimVerdict::Fail
        }
    }

    pub fn passes_entry(&self, entry: &CatalogEntry) -> bool {
        self.evaluate(&RequestFacts::for_entry(entry)) == SimVerdict::Pass
    }

    /// Path the scenario is served under.
    pub fn path(&self) -> String {
        format!("/s/{}", self.id)
    }

    pub fn url(&self, port: u16) -> String {
        format!("http://{}:{port}{}", self.host, self.path())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.predicates.is_empty() {
            return Err(SimError::NoPredicates(self.id.clone()));
        }
        for p in &self.predicates {
            if p.op == Op::Matches && regex::Regex::new(&p.value).is_err() {
                return Err(SimError::BadPattern {
                    id: self.id.clone(),
                    pattern: p.value.clone(),
                });
            }
        }
        if !self.pass_content.contains(&self.marker()) {
            return Err(SimError::MissingMarker(self.id.clone()));
        }
        let leaked = match &self.fail_content {
            FailContent::Decoy { html } | FailContent::Forbidden { html } => html.contains(MARKER_PREFIX),
            FailContent::Redirect { host } => host.contains(MARKER_PREFIX),
        };
        if leaked {
            return Err(SimError::LeakedMarker(self.id.clone()));
        }
        Ok(())
    }
}

/// Proxy map whose egresses all point at a shim, with the pair encoded in
/// the proxy credentials (`ISO2:Network`).
pub fn shim_proxy_map(shim: std::net::SocketAddr) -> ProxyMap {
    ProxyMap::synthetic(|l: Location, n: NetworkType| format!("http://{}:{}@{shim}", l.iso2(), n.name()))
}

pub fn load_scenarios(path: &Path) -> Result<Corpus, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    let corpus: Corpus = serde_json::from_str(&text).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    corpus.validate()?;
    Ok(corpus)
}
