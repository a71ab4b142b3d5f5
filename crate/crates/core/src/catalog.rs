//! The finite set of crawl profiles and the egress table behind them.
//!
//! A catalog entry fixes an (OS, browser) pair, an egress location and a
//! network type. Free-form recommendations are mapped onto the nearest entry
//! by [`Catalog::match_profile`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::records::{AsnInfo, EnvironmentInfo, GeoLocation, HeaderList, UserProfile};

const BUILTIN_USER_AGENTS: &str = include_str!("../data/user_agents.toml");

const DEFAULT_ACCEPT: &str = "text/html,application/xhtml+xml,application/xml;q=0.9,image/avif,image/webp,*/*;q=0.8";

/// Headers never copied from a recommendation into a request.
const DROPPED_HEADERS: &[&str] = &[
    "user-agent",
    "host",
    "content-length",
    "connection",
    "cookie",
    "authorization",
    "proxy-authorization",
    "proxy-connection",
    "transfer-encoding",
    "te",
    "upgrade",
    "keep-alive",
];

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {what}: {message}")]
    Parse { what: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Os {
    Windows,
    #[serde(rename = "macOS")]
    MacOs,
    Linux,
    Android,
    #[serde(rename = "iOS")]
    Ios,
}

impl Os {
    pub const ALL: [Os; 5] = [Os::Windows, Os::MacOs, Os::Linux, Os::Android, Os::Ios];

    pub fn name(self) -> &'static str {
        match self {
            Os::Windows => "Windows",
            Os::MacOs => "macOS",
            Os::Linux => "Linux",
            Os::Android => "Android",
            Os::Ios => "iOS",
        }
    }

    /// Browsers shipped for this OS, in catalog order.
    pub fn browsers(self) -> &'static [Browser] {
        use Browser::*;
        match self {
            Os::Windows | Os::Linux | Os::Android => &[Edge, Chrome, Firefox],
            Os::MacOs | Os::Ios => &[Edge, Chrome, Safari, Firefox],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Browser {
    Edge,
    Chrome,
    Safari,
    Firefox,
}

impl Browser {
    pub fn name(self) -> &'static str {
        match self {
            Browser::Edge => "Edge",
            Browser::Chrome => "Chrome",
            Browser::Safari => "Safari",
            Browser::Firefox => "Firefox",
        }
    }
}

pub fn is_valid_pair(os: Os, browser: Browser) -> bool {
    os.browsers().contains(&browser)
}

/// All supported (OS, browser) pairs, OS-major.
pub fn browser_pairs() -> Vec<(Os, Browser)> {
    Os::ALL
        .iter()
        .flat_map(|&os| os.browsers().iter().map(move |&b| (os, b)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Location {
    #[serde(rename = "United States")]
    UnitedStates,
    India,
    #[serde(rename = "United Kingdom")]
    UnitedKingdom,
    Germany,
    Japan,
    Brazil,
    #[serde(rename = "Saudi Arabia")]
    SaudiArabia,
    Canada,
    Australia,
    #[serde(rename = "South Korea")]
    SouthKorea,
}

impl Location {
    pub const ALL: [Location; 10] = [
        Location::UnitedStates,
        Location::India,
        Location::UnitedKingdom,
        Location::Germany,
        Location::Japan,
        Location::Brazil,
        Location::SaudiArabia,
        Location::Canada,
        Location::Australia,
        Location::SouthKorea,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Location::UnitedStates => "United States",
            Location::India => "India",
            Location::UnitedKingdom => "United Kingdom",
            Location::Germany => "Germany",
            Location::Japan => "Japan",
            Location::Brazil => "Brazil",
            Location::SaudiArabia => "Saudi Arabia",
            Location::Canada => "Canada",
            Location::Australia => "Australia",
            Location::SouthKorea => "South Korea",
        }
    }

    pub fn iso2(self) -> &'static str {
        match self {
            Location::UnitedStates => "US",
            Location::India => "IN",
            Location::UnitedKingdom => "GB",
            Location::Germany => "DE",
            Location::Japan => "JP",
            Location::Brazil => "BR",
            Location::SaudiArabia => "SA",
            Location::Canada => "CA",
            Location::Australia => "AU",
            Location::SouthKorea => "KR",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            Location::UnitedStates => &["usa", "united states of america", "america", "u.s.", "u.s.a.", "us of america"],
            Location::India => &["ind", "bharat"],
            Location::UnitedKingdom => &["uk", "gbr", "great britain", "britain", "england", "u.k."],
            Location::Germany => &["deu", "deutschland"],
            Location::Japan => &["jpn", "nippon", "nihon", "日本"],
            Location::Brazil => &["bra", "brasil"],
            Location::SaudiArabia => &["sau", "ksa", "kingdom of saudi arabia"],
            Location::Canada => &["can"],
            Location::Australia => &["aus"],
            Location::SouthKorea => &["kor", "korea", "republic of korea", "korea, republic of", "south korea (republic of korea)"],
        }
    }

    /// Accept-Language value sent from this location.
    pub fn accept_language(self) -> &'static str {
        match self {
            Location::UnitedStates => "en-US,en;q=0.9",
            Location::India => "en-IN,en;q=0.9,hi;q=0.8",
            Location::UnitedKingdom => "en-GB,en;q=0.9",
            Location::Germany => "de-DE,de;q=0.9,en;q=0.8",
            Location::Japan => "ja-JP,ja;q=0.9,en;q=0.8",
            Location::Brazil => "pt-BR,pt;q=0.9,en;q=0.8",
            Location::SaudiArabia => "ar-SA,ar;q=0.9,en;q=0.8",
            Location::Canada => "en-CA,en;q=0.9,fr-CA;q=0.8",
            Location::Australia => "en-AU,en;q=0.9",
            Location::SouthKorea => "ko-KR,ko;q=0.9,en;q=0.8",
        }
    }

    pub fn capital(self) -> (&'static str, &'static str) {
        match self {
            Location::UnitedStates => ("Ashburn", "Virginia"),
            Location::India => ("Mumbai", "Maharashtra"),
            Location::UnitedKingdom => ("London", "England"),
            Location::Germany => ("Frankfurt am Main", "Hesse"),
            Location::Japan => ("Tokyo", "Tokyo"),
            Location::Brazil => ("Sao Paulo", "Sao Paulo"),
            Location::SaudiArabia => ("Riyadh", "Riyadh Region"),
            Location::Canada => ("Toronto", "Ontario"),
            Location::Australia => ("Sydney", "New South Wales"),
            Location::SouthKorea => ("Seoul", "Seoul"),
        }
    }

    pub fn from_iso2(code: &str) -> Option<Location> {
        Location::ALL.into_iter().find(|l| l.iso2().eq_ignore_ascii_case(code.trim()))
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a free-form location ("Japan", "JP", "Tokyo, Japan") to a catalog
/// location. Whole-string matches win over matches on comma or bracket
/// separated parts.
pub fn normalize_location(text: &str) -> Option<Location> {
    fn exact(s: &str) -> Option<Location> {
        let s = s.trim().trim_matches('.').to_lowercase();
        if s.is_empty() {
            return None;
        }
        Location::ALL.into_iter().find(|l| {
            l.name().to_lowercase() == s
                || l.iso2().to_lowercase() == s
                || l.aliases().iter().any(|a| a.trim_matches('.') == s)
        })
    }
    exact(text).or_else(|| {
        text.split([',', ';', '/', '(', ')', '|'])
            .find_map(exact)
            .or_else(|| {
                // "Residential IP in Japan" style phrases
                let lower = text.to_lowercase();
                Location::ALL
                    .into_iter()
                    .find(|l| contains_phrase(&lower, &l.name().to_lowercase()))
            })
    })
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let words: Vec<&str> = haystack
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let target: Vec<&str> = phrase.split_whitespace().collect();
    !target.is_empty() && words.windows(target.len()).any(|w| w == target.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NetworkType {
    Datacenter,
    Residential,
    Mobile,
}

impl NetworkType {
    pub const ALL: [NetworkType; 3] = [NetworkType::Datacenter, NetworkType::Residential, NetworkType::Mobile];

    pub fn name(self) -> &'static str {
        match self {
            NetworkType::Datacenter => "Datacenter",
            NetworkType::Residential => "Residential",
            NetworkType::Mobile => "Mobile",
        }
    }
}

impl fmt::Display for NetworkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetworkType {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_network(s).ok_or_else(|| CatalogError::Invalid(format!("unknown network type {s:?}")))
    }
}

/// Maps a network description to a type by keyword. Mobile keywords are
/// checked first so "mobile broadband" is Mobile.
pub fn normalize_network(text: &str) -> Option<NetworkType> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let has = |keys: &[&str]| words.iter().any(|w| keys.contains(w));
    if has(&["mobile", "cellular", "carrier", "wireless", "lte", "3g", "4g", "5g", "telecom"]) {
        Some(NetworkType::Mobile)
    } else if has(&["residential", "isp", "home", "broadband", "consumer", "fiber", "fibre", "dsl", "cable", "household"]) {
        Some(NetworkType::Residential)
    } else if has(&["datacenter", "datacentre", "cloud", "hosting", "server", "vps", "dc", "colocation"])
        || contains_phrase(&lower, "data center")
        || contains_phrase(&lower, "data centre")
    {
        Some(NetworkType::Datacenter)
    } else {
        None
    }
}

/// Parses the OS and browser family out of a User-Agent string. Returns
/// `None` when no browser token is present.
pub fn parse_user_agent(ua: &str) -> Option<(Os, Browser)> {
    let os = if ua.contains("Windows NT") {
        Os::Windows
    } else if ua.contains("Android") {
        Os::Android
    } else if ua.contains("iPhone") || ua.contains("iPad") {
        Os::Ios
    } else if ua.contains("Mac OS X") {
        Os::MacOs
    } else {
        Os::Linux
    };
    let browser = if ua.contains("Edg") {
        Browser::Edge
    } else if ua.contains("Firefox") || ua.contains("FxiOS") {
        Browser::Firefox
    } else if ua.contains("Chrome") || ua.contains("CriOS") {
        Browser::Chrome
    } else if ua.contains("Safari") {
        Browser::Safari
    } else {
        return None;
    };
    Some((os, browser))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchQuality {
    /// UA, location and network all resolved.
    Exact,
    /// UA resolved; location or network fell back to a default.
    Partial,
    /// UA unusable; the Standard entry was substituted.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub os: Os,
    pub browser: Browser,
    pub location: Location,
    pub network: NetworkType,
    pub user_agent: String,
    pub header_set: HeaderList,
    pub proxy_ref: String,
}

impl CatalogEntry {
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.os.name(),
            self.browser.name(),
            self.location.name(),
            self.network.name()
        )
    }
}

pub fn proxy_ref(location: Location, network: NetworkType) -> String {
    format!("{}/{}", location.name(), network.name())
}

fn header_set(user_agent: &str, location: Location) -> HeaderList {
    [
        ("User-Agent", user_agent),
        ("Accept", DEFAULT_ACCEPT),
        ("Accept-Language", location.accept_language()),
    ]
    .into_iter()
    .collect()
}

#[derive(Deserialize)]
struct AgentFile {
    standard: String,
    agent: Vec<AgentLine>,
}

#[derive(Deserialize)]
struct AgentLine {
    os: Os,
    browser: Browser,
    user_agent: String,
}

/// The profile catalog: every supported (OS, browser) pair at every
/// location and network type.
#[derive(Debug, Clone)]
pub struct Catalog {
    agents: BTreeMap<(Os, Browser), String>,
    standard_ua: String,
}

impl Catalog {
    /// The catalog built from the pinned User-Agent table shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_USER_AGENTS).expect("bundled user agent table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Parses a User-Agent table. Every supported pair must be present
    /// exactly once and each string must parse back to its own pair.
    pub fn from_toml(text: &str) -> Result<Self, CatalogError> {
        let file: AgentFile = toml::from_str(text).map_err(|e| CatalogError::Parse {
            what: "user agent table".into(),
            message: e.to_string(),
        })?;
        let mut agents = BTreeMap::new();
        for line in file.agent {
            if !is_valid_pair(line.os, line.browser) {
                return Err(CatalogError::Invalid(format!(
                    "{} on {} is not a supported pair",
                    line.browser.name(),
                    line.os.name()
                )));
            }
            if parse_user_agent(&line.user_agent) != Some((line.os, line.browser)) {
                return Err(CatalogError::Invalid(format!(
                    "user agent for {}/{} does not parse back to that pair",
                    line.os.name(),
                    line.browser.name()
                )));
            }
            if agents.insert((line.os, line.browser), line.user_agent).is_some() {
                return Err(CatalogError::Invalid(format!(
                    "duplicate user agent for {}/{}",
                    line.os.name(),
                    line.browser.name()
                )));
            }
        }
        for pair in browser_pairs() {
            if !agents.contains_key(&pair) {
                return Err(CatalogError::Invalid(format!(
                    "missing user agent for {}/{}",
                    pair.0.name(),
                    pair.1.name()
                )));
            }
        }
        if file.standard.trim().is_empty() {
            return Err(CatalogError::Invalid("standard user agent is empty".into()));
        }
        Ok(Self {
            agents,
            standard_ua: file.standard,
        })
    }

    pub fn user_agent(&self, os: Os, browser: Browser) -> Option<&str> {
        self.agents.get(&(os, browser)).map(String::as_str)
    }

    pub fn entry(&self, os: Os, browser: Browser, location: Location, network: NetworkType) -> Option<CatalogEntry> {
        let ua = self.user_agent(os, browser)?;
        Some(CatalogEntry {
            os,
            browser,
            location,
            network,
            user_agent: ua.to_string(),
            header_set: header_set(ua, location),
            proxy_ref: proxy_ref(location, network),
        })
    }

    /// All entries in a fixed order: pair-major, then location, then network.
    pub fn entries(&self) -> Vec<CatalogEntry> {
        let mut out = Vec::with_capacity(self.len());
        for (os, browser) in browser_pairs() {
            for location in Location::ALL {
                for network in NetworkType::ALL {
                    out.extend(self.entry(os, browser, location, network));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.agents.len() * Location::ALL.len() * NetworkType::ALL.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// The baseline crawler profile: headless Chrome on Linux from a US
    /// datacenter. It is not one of the enumerated entries.
    pub fn standard_entry(&self) -> CatalogEntry {
        let location = Location::UnitedStates;
        let network = NetworkType::Datacenter;
        CatalogEntry {
            os: Os::Linux,
            browser: Browser::Chrome,
            location,
            network,
            user_agent: self.standard_ua.clone(),
            header_set: header_set(&self.standard_ua, location),
            proxy_ref: proxy_ref(location, network),
        }
    }

    /// Maps a recommendation onto the nearest entry. Unknown locations
    /// default to the United States and unknown networks to Residential.
    /// A headless User-Agent names no victim browser and maps to the
    /// Standard entry.
    pub fn match_profile(&self, profile: &UserProfile) -> (CatalogEntry, MatchQuality) {
        if profile.user_agent().is_some_and(|ua| ua.contains("Headless")) {
            return (self.standard_entry(), MatchQuality::Fallback);
        }
        let pair = profile
            .user_agent()
            .and_then(parse_user_agent)
            .filter(|&(os, b)| is_valid_pair(os, b));
        let Some((os, browser)) = pair else {
            return (self.standard_entry(), MatchQuality::Fallback);
        };
        let location = normalize_location(&profile.ip_location);
        let network = normalize_network(&profile.network_provider);
        let quality = if location.is_some() && network.is_some() {
            MatchQuality::Exact
        } else {
            MatchQuality::Partial
        };
        let entry = self
            .entry(
                os,
                browser,
                location.unwrap_or(Location::UnitedStates),
                network.unwrap_or(NetworkType::Residential),
            )
            .expect("valid pairs always have an agent");
        (entry, quality)
    }
}

/// Request headers for an entry with extra recommended headers layered on
/// top. Recommended values replace the entry's, except User-Agent, which
/// always comes from the entry. Credential and hop-by-hop headers are dropped.
pub fn layered_headers(entry: &CatalogEntry, extra: &HeaderList) -> HeaderList {
    let mut headers = entry.header_set.clone();
    for (name, value) in extra.iter() {
        if DROPPED_HEADERS.iter().any(|d| d.eq_ignore_ascii_case(name)) || value.trim().is_empty() {
            continue;
        }
        headers.set(name, value);
    }
    headers
}

/// Where traffic for one (location, network) pair leaves from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Egress {
    /// Proxy URL (`http://`, `socks5://`), or `direct`.
    pub proxy: String,
    pub city: String,
    pub region: String,
    pub asn: String,
    pub asn_name: String,
    #[serde(default)]
    pub asn_domain: String,
}

impl Egress {
    pub fn proxy_url(&self) -> Option<&str> {
        let p = self.proxy.trim();
        (!p.is_empty() && !p.eq_ignore_ascii_case("direct")).then_some(p)
    }

    pub fn environment(&self, location: Location, language: &str) -> EnvironmentInfo {
        EnvironmentInfo {
            ip_geolocation: GeoLocation {
                country: location.iso2().to_string(),
                city: self.city.clone(),
                region: self.region.clone(),
            },
            asn: AsnInfo {
                asn: self.asn.clone(),
                name: self.asn_name.clone(),
                domain: self.asn_domain.clone(),
            },
            language: language.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct ProxyFile {
    egress: Vec<EgressLine>,
}

#[derive(Deserialize)]
struct EgressLine {
    location: Location,
    network: NetworkType,
    #[serde(flatten)]
    egress: Egress,
}

/// Egress for every (location, network) pair in the catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyMap {
    entries: BTreeMap<(Location, NetworkType), Egress>,
}

impl ProxyMap {
    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Parses a proxy map; every (location, network) pair must appear once.
    pub fn from_toml(text: &str) -> Result<Self, CatalogError> {
        let file: ProxyFile = toml::from_str(text).map_err(|e| CatalogError::Parse {
            what: "proxy map".into(),
            message: e.to_string(),
        })?;
        let mut entries = BTreeMap::new();
        for line in file.egress {
            if line.egress.proxy.trim().is_empty() {
                return Err(CatalogError::Invalid(format!(
                    "empty proxy for {}",
                    proxy_ref(line.location, line.network)
                )));
            }
            if entries.insert((line.location, line.network), line.egress).is_some() {
                return Err(CatalogError::Invalid(format!(
                    "duplicate egress for {}",
                    proxy_ref(line.location, line.network)
                )));
            }
        }
        let map = Self { entries };
        map.check_coverage()?;
        Ok(map)
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            egress: Vec<OutLine<'a>>,
        }
        #[derive(Serialize)]
        struct OutLine<'a> {
            location: Location,
            network: NetworkType,
            #[serde(flatten)]
            egress: &'a Egress,
        }
        let out = Out {
            egress: self
                .entries
                .iter()
                .map(|(&(location, network), egress)| OutLine { location, network, egress })
                .collect(),
        };
        toml::to_string(&out).expect("proxy map serializes")
    }

    /// A map with synthetic geo and ASN metadata; `proxy_for` supplies the
    /// proxy URL (or `direct`) for each pair.
    pub fn synthetic(mut proxy_for: impl FnMut(Location, NetworkType) -> String) -> Self {
        let mut entries = BTreeMap::new();
        for (i, location) in Location::ALL.into_iter().enumerate() {
            for (j, network) in NetworkType::ALL.into_iter().enumerate() {
                let (city, region) = location.capital();
                let kind = match network {
                    NetworkType::Datacenter => "Cloud Hosting",
                    NetworkType::Residential => "Residential Broadband",
                    NetworkType::Mobile => "Mobile Carrier",
                };
                let slug = location.iso2().to_lowercase();
                entries.insert(
                    (location, network),
                    Egress {
                        proxy: proxy_for(location, network),
                        city: city.into(),
                        region: region.into(),
                        asn: format!("AS{}", 64512 + i * 3 + j),
                        asn_name: format!("{} {kind}", location.name()),
                        asn_domain: format!("{}-{}.{slug}.example", network.name().to_lowercase(), slug),
                    },
                );
            }
        }
        Self { entries }
    }

    /// Every pair egresses directly from this host.
    pub fn direct() -> Self {
        Self::synthetic(|_, _| "direct".to_string())
    }

    pub fn get(&self, location: Location, network: NetworkType) -> Option<&Egress> {
        self.entries.get(&(location, network))
    }

    pub fn for_entry(&self, entry: &CatalogEntry) -> Option<&Egress> {
        self.get(entry.location, entry.network)
    }

    pub fn check_coverage(&self) -> Result<(), CatalogError> {
        let missing: Vec<String> = Location::ALL
            .into_iter()
            .flat_map(|l| NetworkType::ALL.into_iter().map(move |n| (l, n)))
            .filter(|k| !self.entries.contains_key(k))
            .map(|(l, n)| proxy_ref(l, n))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CatalogError::Invalid(format!("proxy map has no egress for {}", missing.join(", "))))
        }
    }
}
