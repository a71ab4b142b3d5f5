use std::collections::HashSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::crawler::DnsLookup;

/// Hosts and DNS targets of common parking services.
pub const DEFAULT_PARKING_PATTERNS: &[&str] = &[
    r"(?i)sedoparking\.com",
    r"(?i)parkingcrew\.net",
    r"(?i)bodis\.com",
    r"(?i)parklogic\.com",
    r"(?i)above\.com",
    r"(?i)afternic\.com",
    r"(?i)hugedomains\.com",
    r"(?i)domainparking",
    r"(?i)parked\.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    InvalidUrl,
    Duplicate,
    PopularDomain,
    Nxdomain,
    Parking,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::InvalidUrl => "invalid-url",
            DropReason::Duplicate => "duplicate",
            DropReason::PopularDomain => "popular-domain",
            DropReason::Nxdomain => "nxdomain",
            DropReason::Parking => "parking",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestFilter {
    allowlist: HashSet<String>,
    parking: Vec<Regex>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub kept: Vec<String>,
    pub dropped: Vec<(String, DropReason)>,
    /// Resolver failures; the URL is kept.
    pub warnings: Vec<String>,
}

impl IngestFilter {
    pub fn new(allowlist: impl IntoIterator<Item = String>, parking_patterns: &[String]) -> Result<Self, String> {
        let parking = parking_patterns
            .iter()
            .map(|p| Regex::new(p).map_err(|e| format!("parking pattern {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            allowlist: allowlist
                .into_iter()
                .map(|d| d.trim().trim_end_matches('.').to_ascii_lowercase())
                .filter(|d| !d.is_empty())
                .collect(),
            parking,
        })
    }

    pub fn with_default_parking(allowlist: impl IntoIterator<Item = String>) -> Self {
        let patterns: Vec<String> = DEFAULT_PARKING_PATTERNS.iter().map(|s| s.to_string()).collect();
        Self::new(allowlist, &patterns).expect("default parking patterns compile")
    }

    fn is_popular(&self, host: &str) -> bool {
        let registrable = psl::domain_str(host).unwrap_or(host);
        self.allowlist.contains(registrable) || self.allowlist.contains(host)
    }

    fn is_parking(&self, text: &str) -> bool {
        self.parking.iter().any(|r| r.is_match(text))
    }

    /// Filters a URL list in order. Exact duplicates keep their first
    /// occurrence.
    pub async fn run(&self, urls: &[String], dns: &dyn DnsLookup) -> IngestReport {
        let mut report = IngestReport::default();
        let mut seen = HashSet::new();
        for raw in urls {
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            if !seen.insert(raw.to_string()) {
                report.dropped.push((raw.to_string(), DropReason::Duplicate));
                continue;
            }
            let host = match Url::parse(raw) {
                Ok(u) if matches!(u.scheme(), "http" | "https") => match u.host_str() {
                    Some(h) => h.trim_end_matches('.').to_ascii_lowercase(),
                    None => {
                        report.dropped.push((raw.to_string(), DropReason::InvalidUrl));
                        continue;
                    }
                },
                _ => {
                    report.dropped.push((raw.to_string(), DropReason::InvalidUrl));
                    continue;
                }
            };
            if self.is_popular(&host) {
                report.dropped.push((raw.to_string(), DropReason::PopularDomain));
                continue;
            }
            if self.is_parking(raw) {
                report.dropped.push((raw.to_string(), DropReason::Parking));
                continue;
            }
            if host.parse::<std::net::IpAddr>().is_err() && !host.starts_with('[') {
                match dns.resolve(&host).await {
                    Ok(info) if info.is_nxdomain() => {
                        report.dropped.push((raw.to_string(), DropReason::Nxdomain));
                        continue;
                    }
                    Ok(info) if info.answer.iter().any(|a| self.is_parking(&a.data)) => {
                        report.dropped.push((raw.to_string(), DropReason::Parking));
                        continue;
                    }
                    Ok(_) => {}
                    Err(e) => report.warnings.push(format!("{raw}: dns: {e}")),
                }
            }
            report.kept.push(raw.to_string());
        }
        report
    }
}

/// Reads a popular-domain list: one domain per line, or `rank,domain`
/// rows. Blank lines and `#` comments are skipped.
pub fn load_allowlist(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.rsplit(',').next().unwrap_or(l).trim().to_string())
        .collect())
}

/// Reads a URL list, one per line, skipping blanks and `#` comments.
pub fn read_url_list(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
