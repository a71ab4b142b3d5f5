use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CloakScenario, FailContent, Field, Op, Predicate, SimError};
use crate::crawler::StaticDomainSource;
use crate::embedding::tokenize;
use crate::records::{DnsAnswer, DnsInfo, DomainInfo};

/// Number of distinct family templates; larger corpora cycle through them.
pub const FAMILY_COUNT: usize = 8;

/// Share of scenarios whose country (or language) gate is swapped for the
/// family's alternate.
const ALT_RATE: f64 = 0.1;

const HOST_WORDS: &[&str] = &[
    "secure", "login", "verify", "account", "update", "support", "auth", "service", "member", "portal",
];

#[derive(Clone, Copy)]
enum FailKind {
    Decoy,
    Redirect,
    Forbidden,
}

struct Family {
    slug: &'static str,
    brand: &'static str,
    lang: &'static str,
    country: &'static str,
    /// Field, operator and interchangeable values.
    gates: &'static [(Field, Op, &'static [&'static str])],
    alt: (Field, &'static str),
    fail: FailKind,
    registrar: &'static str,
    iana_id: &'static str,
    registrant: &'static str,
    abuse: &'static str,
    name_servers: [&'static str; 2],
    ip_prefix: &'static str,
    ttl: u32,
    banner: &'static str,
    created: (i32, u32),
    title: &'static str,
    heading: &'static str,
    lead: &'static str,
    id_label: &'static str,
    button: &'static str,
    notices: [&'static str; 3],
    decoy: &'static str,
}

const FAMILIES: [Family; FAMILY_COUNT] = [
    Family {
        slug: "sakura-card",
        brand: "Sakura Card",
        lang: "ja",
        country: "JP",
        gates: &[
            (Field::UserAgent, Op::Contains, &["Android", "Android 1"]),
            (Field::GeoCountry, Op::Equals, &["JP"]),
        ],
        alt: (Field::GeoCountry, "KR"),
        fail: FailKind::Redirect,
        registrar: "GMO Internet Group, Inc. d/b/a Onamae.com",
        iana_id: "49",
        registrant: "Whois Privacy Protection Service by onamae.com",
        abuse: "abuse@gmo.jp",
        name_servers: ["dns1.onamae.com", "dns2.onamae.com"],
        ip_prefix: "45.76.198",
        ttl: 300,
        banner: "nginx/1.24.0",
        created: (2025, 1),
        title: "Card Member Login",
        heading: "Sakura Card Net Service Identity Confirmation",
        lead: "Unusual card usage was detected. Please confirm your card member information to keep using the card.",
        id_label: "Card Member ID",
        button: "Confirm",
        notices: [
            "If confirmation is not completed within 24 hours your card will be suspended.",
            "If confirmation is not completed within 48 hours your card will be suspended.",
            "If confirmation is not completed today your card usage will be suspended.",
        ],
        decoy: "Sakura Card members can review campaign information on the official site.",
    },
    Family {
        slug: "kumo-post",
        brand: "Kumo Post",
        lang: "ja",
        country: "JP",
        gates: &[
            (Field::UserAgent, Op::Contains, &["Windows NT", "Windows NT 10.0"]),
            (Field::GeoCountry, Op::Equals, &["JP"]),
            (Field::NetworkType, Op::Equals, &["Residential"]),
        ],
        alt: (Field::GeoCountry, "US"),
        fail: FailKind::Decoy,
        registrar: "Alibaba Cloud Computing (Beijing) Co., Ltd.",
        iana_id: "420",
        registrant: "REDACTED FOR PRIVACY",
        abuse: "DomainAbuse@service.aliyun.com",
        name_servers: ["ns7.alidns.com", "ns8.alidns.com"],
        ip_prefix: "47.74.33",
        ttl: 600,
        banner: "Tengine",
        created: (2025, 2),
        title: "Redelivery Request",
        heading: "Your parcel could not be delivered because the recipient was absent",
        lead: "Kumo Post held your parcel at the local depot. Enter your details and pay the redelivery fee of 330 yen.",
        id_label: "Tracking Number",
        button: "Request Redelivery",
        notices: [
            "Parcels not claimed within 7 days are returned to the sender.",
            "Parcels not claimed within 5 days are returned to the sender.",
            "Parcels not claimed within 7 days will be returned to the sender.",
        ],
        decoy: "Kumo Post tracking service is currently under scheduled maintenance. Please try again later.",
    },
    Family {
        slug: "liberty-bank",
        brand: "Liberty Federal Bank",
        lang: "en",
        country: "US",
        gates: &[
            (Field::GeoCountry, Op::Equals, &["US"]),
            (Field::NetworkType, Op::Matches, &["Residential|Mobile", "^(Residential|Mobile)$"]),
        ],
        alt: (Field::GeoCountry, "CA"),
        fail: FailKind::Forbidden,
        registrar: "NameCheap, Inc.",
        iana_id: "1068",
        registrant: "Privacy service provided by Withheld for Privacy ehf",
        abuse: "abuse@namecheap.com",
        name_servers: ["dns1.registrar-servers.com", "dns2.registrar-servers.com"],
        ip_prefix: "104.21.48",
        ttl: 1800,
        banner: "nginx/1.26.2",
        created: (2024, 11),
        title: "Online Banking Sign On",
        heading: "Sign on to Liberty Federal Online Banking",
        lead: "For your security we have temporarily limited your account. Sign on to restore full access.",
        id_label: "Username",
        button: "Sign On",
        notices: [
            "Liberty Federal Bank will never ask for your PIN by email.",
            "Liberty Federal Bank will never ask for your PIN by text message.",
            "Liberty Federal Bank will never ask you for your PIN by email.",
        ],
        decoy: "unused",
    },
    Family {
        slug: "fuji-mobile",
        brand: "Fuji Mobile",
        lang: "ja",
        country: "JP",
        gates: &[
            (Field::UserAgent, Op::Contains, &["Macintosh", "Intel Mac OS X"]),
            (Field::AcceptLanguage, Op::Contains, &["ja", "ja-JP"]),
        ],
        alt: (Field::AcceptLanguage, "ko"),
        fail: FailKind::Decoy,
        registrar: "Tucows Domains Inc.",
        iana_id: "69",
        registrant: "Contact Privacy Inc. Customer 7151571251",
        abuse: "domainabuse@tucows.com",
        name_servers: ["ns1.systemdns.com", "ns2.systemdns.com"],
        ip_prefix: "172.67.161",
        ttl: 3600,
        banner: "Apache/2.4.62 (Debian)",
        created: (2025, 3),
        title: "My Fuji ID Login",
        heading: "Fuji Mobile points are about to expire",
        lead: "You have 12,800 unused Fuji points. Log in with your Fuji ID to exchange them before they expire.",
        id_label: "Fuji ID",
        button: "Log in",
        notices: [
            "Points expire at the end of this month.",
            "Points expire at the end of the month.",
            "Unused points expire at the end of this month.",
        ],
        decoy: "Fuji Mobile store locations and opening hours are listed below.",
    },
    Family {
        slug: "royal-parcel",
        brand: "Royal Parcel Service",
        lang: "en",
        country: "GB",
        gates: &[
            (Field::GeoCountry, Op::Equals, &["GB"]),
            (Field::NetworkType, Op::Matches, &["Mobile|Residential", "^(Mobile|Residential)$"]),
        ],
        alt: (Field::GeoCountry, "AU"),
        fail: FailKind::Redirect,
        registrar: "Hostinger Operations, UAB",
        iana_id: "1636",
        registrant: "Privacy Protect, LLC (PrivacyProtect.org)",
        abuse: "abuse-tracker@hostinger.com",
        name_servers: ["ns1.dns-parking.com", "ns2.dns-parking.com"],
        ip_prefix: "185.224.137",
        ttl: 14400,
        banner: "LiteSpeed",
        created: (2025, 1),
        title: "Delivery Fee Outstanding",
        heading: "We could not deliver your item due to an unpaid shipping fee",
        lead: "A customs charge of 1.45 GBP is outstanding. Please pay now to schedule a new delivery slot.",
        id_label: "Full name",
        button: "Pay Now",
        notices: [
            "Items are returned to the sender after 14 days.",
            "Items are returned to sender after 14 days.",
            "Unclaimed items are returned to the sender after 14 days.",
        ],
        decoy: "unused",
    },
    Family {
        slug: "outback-tax",
        brand: "Outback Tax Office",
        lang: "en",
        country: "AU",
        gates: &[
            (Field::UserAgent, Op::Contains, &["iPhone", "iPhone OS"]),
            (Field::GeoCountry, Op::Equals, &["AU"]),
        ],
        alt: (Field::GeoCountry, "GB"),
        fail: FailKind::Forbidden,
        registrar: "GoDaddy.com, LLC",
        iana_id: "146",
        registrant: "Domains By Proxy, LLC",
        abuse: "abuse@godaddy.com",
        name_servers: ["ns51.domaincontrol.com", "ns52.domaincontrol.com"],
        ip_prefix: "160.153.0",
        ttl: 3600,
        banner: "Microsoft-IIS/10.0",
        created: (2024, 12),
        title: "Tax Refund Notification",
        heading: "You are eligible for a tax refund of 428.60 AUD",
        lead: "After the annual calculation of your fiscal activity we determined that you are owed a refund.",
        id_label: "Tax File Number",
        button: "Claim Refund",
        notices: [
            "Refund requests must be submitted within 3 business days.",
            "Refund requests must be submitted within 5 business days.",
            "Refund claims must be submitted within 3 business days.",
        ],
        decoy: "unused",
    },
    Family {
        slug: "rhein-bank",
        brand: "Rheinbank Online",
        lang: "de",
        country: "DE",
        gates: &[
            (Field::UserAgent, Op::Contains, &["Firefox", "Gecko/"]),
            (Field::GeoCountry, Op::Equals, &["DE"]),
        ],
        alt: (Field::GeoCountry, "GB"),
        fail: FailKind::Decoy,
        registrar: "Key-Systems GmbH",
        iana_id: "269",
        registrant: "Data Protected",
        abuse: "abuse@key-systems.net",
        name_servers: ["helium.ns.hetzner.de", "hydrogen.ns.hetzner.com"],
        ip_prefix: "116.203.54",
        ttl: 86400,
        banner: "nginx",
        created: (2025, 2),
        title: "Sicherheitsupdate",
        heading: "Rheinbank pushTAN Verfahren Aktualisierung",
        lead: "Aufgrund neuer Richtlinien muss Ihr pushTAN Verfahren aktualisiert werden. Bitte melden Sie sich an.",
        id_label: "Anmeldename",
        button: "Anmelden",
        notices: [
            "Ohne Aktualisierung wird Ihr Online Banking Zugang gesperrt.",
            "Ohne Aktualisierung wird Ihr Online Banking Zugang vorübergehend gesperrt.",
            "Ohne diese Aktualisierung wird Ihr Online Banking Zugang gesperrt.",
        ],
        decoy: "Rheinbank Filialen und Geldautomaten finden Sie in der Filialsuche.",
    },
    Family {
        slug: "hanbit-pay",
        brand: "Hanbit Pay",
        lang: "ko",
        country: "KR",
        gates: &[
            (Field::UserAgent, Op::Matches, &["Android|iPhone", "(Android|iPhone)"]),
            (Field::GeoCountry, Op::Equals, &["KR"]),
        ],
        alt: (Field::GeoCountry, "JP"),
        fail: FailKind::Redirect,
        registrar: "Gabia, Inc.",
        iana_id: "244",
        registrant: "Gabia Privacy Service",
        abuse: "abuse@gabia.com",
        name_servers: ["ns.gabia.co.kr", "ns1.gabia.co.kr"],
        ip_prefix: "211.47.74",
        ttl: 300,
        banner: "openresty",
        created: (2025, 3),
        title: "Payment Verification",
        heading: "Hanbit Pay overseas payment of 1,290,000 KRW was approved",
        lead: "If you did not make this payment, verify your identity immediately to cancel the transaction.",
        id_label: "Mobile number",
        button: "Cancel Payment",
        notices: [
            "Cancellation is available for 30 minutes after approval.",
            "Cancellation is only available for 30 minutes after approval.",
            "Cancellation is available for 60 minutes after approval.",
        ],
        decoy: "unused",
    },
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegitSite {
    pub host: String,
    pub brand: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub seed: u64,
    pub scenarios: Vec<CloakScenario>,
    /// Legitimate brand sites that redirects point at.
    pub legit: Vec<LegitSite>,
}

impl Corpus {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut seen = HashSet::new();
        for s in &self.scenarios {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(SimError::DuplicateId(s.id.clone()));
            }
        }
        Ok(())
    }

    pub fn families(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.scenarios
            .iter()
            .filter(|s| seen.insert(s.family.clone()))
            .map(|s| s.family.clone())
            .collect()
    }

    pub fn family(&self, name: &str) -> Vec<&CloakScenario> {
        self.scenarios.iter().filter(|s| s.family == name).collect()
    }

    pub fn get(&self, id: &str) -> Option<&CloakScenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// Registration and DNS fixtures for every scenario and legit host.
    pub fn domain_source(&self) -> StaticDomainSource {
        let mut source = StaticDomainSource::new(self.scenarios.iter().map(|s| s.domain.clone()));
        for site in &self.legit {
            let info = DomainInfo {
                domain_name: site.host.clone(),
                dns: DnsInfo {
                    status: 0,
                    answer: vec![DnsAnswer {
                        name: format!("{}.", site.host),
                        record_type: 1,
                        ttl: 3600,
                        data: "192.0.2.10".into(),
                    }],
                },
                ..DomainInfo::default()
            };
            source.insert(info);
        }
        source
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SimError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SimError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }
}

fn pass_page(f: &Family, brand: &str, id: &str, notice: &str, year: i32) -> String {
    format!(
        "<!DOCTYPE html><html lang=\"{lang}\"><head><meta charset=\"utf-8\"><title>{brand} | {title}</title>\
<link rel=\"stylesheet\" href=\"/assets/app.css\"></head><body><header><img src=\"/assets/logo.png\" alt=\"{brand}\">\
<nav><a href=\"#\">Help</a></nav></header><main><h1>{heading}</h1><p>{lead}</p>\
<form method=\"post\" action=\"/auth/submit\"><label for=\"u\">{id_label}</label><input id=\"u\" name=\"u\">\
<label for=\"p\">Password</label><input id=\"p\" name=\"p\" type=\"password\"><button type=\"submit\">{button}</button></form>\
<p class=\"notice\">{notice}</p></main><footer>&copy; {year} {brand}. All rights reserved. \
<span class=\"ref\">SIM-PHISH-{id}</span></footer></body></html>",
        lang = f.lang,
        title = f.title,
        heading = f.heading,
        lead = f.lead,
        id_label = f.id_label,
        button = f.button,
    )
}

fn decoy_page(brand: &str, text: &str) -> String {
    format!(
        "<!DOCTYPE html><html><head><title>{brand}</title></head><body><h1>{brand}</h1><p>{text}</p></body></html>"
    )
}

fn forbidden_page(banner: &str) -> String {
    format!(
        "<html>\r\n<head><title>403 Forbidden</title></head>\r\n<body>\r\n<center><h1>403 Forbidden</h1></center>\r\n\
<hr><center>{banner}</center>\r\n<p>You don't have permission to access this resource.</p>\r\n</body>\r\n</html>\r\n"
    )
}

/// Builds a deterministic scenario corpus. Families are drawn from a fixed
/// set of templates; scenarios within a family share predicate fields and
/// operators, registrar and DNS hosting, and near-identical phishing pages.
pub fn generate_corpus(n_families: usize, per_family: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenarios = Vec::with_capacity(n_families * per_family);
    let mut legit = Vec::new();
    for fi in 0..n_families {
        let f = &FAMILIES[fi % FAMILY_COUNT];
        let round = fi / FAMILY_COUNT;
        let (slug, brand) = if round == 0 {
            (f.slug.to_string(), f.brand.to_string())
        } else {
            (format!("{}{}", f.slug, round + 1), format!("{} {}", f.brand, round + 1))
        };
        let legit_host = format!("www.{slug}.test");
        legit.push(LegitSite {
            host: legit_host.clone(),
            brand: brand.clone(),
        });
        for n in 1..=per_family {
            let id = format!("{slug}-{n:02}");
            let word = HOST_WORDS[rng.random_range(0..HOST_WORDS.len())];
            let host = format!("{slug}-{word}-{n:02}.test");
            let swap_alt = rng.random_bool(ALT_RATE);
            let predicates = f
                .gates
                .iter()
                .map(|&(field, op, values)| {
                    let value = if swap_alt && field == f.alt.0 {
                        f.alt.1
                    } else {
                        values[rng.random_range(0..values.len())]
                    };
                    Predicate {
                        field,
                        op,
                        value: value.to_string(),
                    }
                })
                .collect();
            let notice = f.notices[rng.random_range(0..f.notices.len())];
            let (year, month) = f.created;
            let day = rng.random_range(1..=28u32);
            let (hh, mm, ss) = (rng.random_range(0..24u32), rng.random_range(0..60u32), rng.random_range(0..60u32));
            let registration: BTreeMap<String, String> = [
                ("registrar", f.registrar.to_string()),
                ("registrar_iana_id", f.iana_id.to_string()),
                ("registrar_abuse_contact_email", f.abuse.to_string()),
                ("registrant_organization", f.registrant.to_string()),
                ("registrant_country", f.country.to_string()),
                ("creation_date", format!("{year}-{month:02}-{day:02}T{hh:02}:{mm:02}:{ss:02}Z")),
                ("registry_expiry_date", format!("{}-{month:02}-{day:02}T{hh:02}:{mm:02}:{ss:02}Z", year + 1)),
                ("name_server", f.name_servers.join(" ")),
                ("domain_status", "clientTransferProhibited https://icann.org/epp#clientTransferProhibited".to_string()),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            let domain = DomainInfo {
                domain_name: host.clone(),
                registration,
                dns: DnsInfo {
                    status: 0,
                    answer: vec![DnsAnswer {
                        name: format!("{host}."),
                        record_type: 1,
                        ttl: f.ttl,
                        data: format!("{}.{}", f.ip_prefix, rng.random_range(2..255u32)),
                    }],
                },
                tls: BTreeMap::new(),
            };
            let fail_content = match f.fail {
                FailKind::Decoy => FailContent::Decoy {
                    html: decoy_page(&brand, f.decoy),
                },
                FailKind::Redirect => FailContent::Redirect {
                    host: legit_host.clone(),
                },
                FailKind::Forbidden => FailContent::Forbidden {
                    html: forbidden_page(f.banner),
                },
            };
            scenarios.push(CloakScenario {
                pass_content: pass_page(f, &brand, &id, notice, year),
                id,
                family: slug.clone(),
                host,
                predicates,
                fail_content,
                server_banner: f.banner.to_string(),
                domain,
            });
        }
    }
    Corpus { seed, scenarios, legit }
}

/// Jaccard similarity of the token sets of two texts.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let a: HashSet<String> = tokenize(a).into_iter().collect();
    let b: HashSet<String> = tokenize(b).into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / a.union(&b).count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::crawler::html;

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate_corpus(8, 25, 42);
        let b = generate_corpus(8, 25, 42);
        assert_eq!(a, b);
        assert_eq!(a.scenarios.len(), 200);
        assert_ne!(a, generate_corpus(8, 25, 43));
        a.validate().unwrap();
    }

    #[test]
    fn families_share_predicate_structure() {
        let c = generate_corpus(8, 25, 42);
        assert_eq!(c.families().len(), 8);
        for fam in c.families() {
            let members = c.family(&fam);
            let shape = |s: &CloakScenario| s.predicates.iter().map(|p| (p.field, p.op)).collect::<Vec<_>>();
            assert!(members.iter().all(|s| shape(s) == shape(members[0])), "{fam}");
        }
    }

    #[test]
    fn pass_pages_overlap_within_family() {
        let c = generate_corpus(8, 25, 42);
        for fam in c.families() {
            let texts: Vec<String> = c.family(&fam).iter().map(|s| html::visible_text(&s.pass_content)).collect();
            for i in 0..texts.len() {
                for j in i + 1..texts.len() {
                    let jac = token_jaccard(&texts[i], &texts[j]);
                    assert!(jac >= 0.8, "{fam}: {i} vs {j} = {jac}");
                }
            }
        }
    }

    #[test]
    fn standard_fails_and_few_entries_pass() {
        let c = generate_corpus(8, 25, 42);
        let catalog = Catalog::builtin();
        let entries = catalog.entries();
        let standard = catalog.standard_entry();
        for s in &c.scenarios {
            assert!(!s.passes_entry(&standard), "{} passes Standard", s.id);
            let passing = entries.iter().filter(|e| s.passes_entry(e)).count();
            assert!(passing >= 1, "{} is unreachable", s.id);
            assert!(passing * 10 <= entries.len(), "{}: {passing} of {}", s.id, entries.len());
        }
    }

    #[test]
    fn larger_corpora_cycle_templates() {
        let c = generate_corpus(10, 2, 1);
        assert_eq!(c.families().len(), 10);
        assert!(c.get("sakura-card2-01").is_some());
        c.validate().unwrap();
    }
}
