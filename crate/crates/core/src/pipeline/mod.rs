//! Per-URL orchestration, batch runs, feedback and evaluation.
//!
//! In [`Mode::Parrot`] a URL goes through domain collection, a preliminary
//! access with the Standard entry, case retrieval, profile advice, catalog
//! matching, the profiled access and detection. The two baselines skip
//! straight to a single access: [`Mode::Standard`] with the Standard entry
//! and [`Mode::TypicalUser`] with a seeded-random catalog entry.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::advisor::{build_prompt, parse_reply, request_profile, AdviceError, ChatBackend, PromptBundle, TokenUsage};
use crate::advisor::ProfileRecommendation;
use crate::catalog::{Catalog, CatalogEntry, MatchQuality, ProxyMap};
use crate::cloaksim::load_scenarios;
use crate::crawler::{
    collect_domain_info, plan_for, profiled_access, CrawlError, DomainCollectors, FetchBackend, FetchResult,
    NullDomainSource,
};
use crate::records::{CrawlRecord, DomainInfo, EnvironmentInfo, HeaderList, Label, RecordId};
use crate::retrieval::{CaseStore, OpenReport, RetrievalParams, RetrievedExamples, StoreError};

mod config;
mod detector;
mod eval;
mod feedback;
mod ingest;

pub use config::{CatalogPaths, ConfigError, IngestSettings, RunConfig, StorePaths};
pub use detector::{parse_verdict_word, CommandDetector, Detector, DetectorConfig, MarkerDetector};
pub use eval::{evaluate, evaluate_records, load_truth, parse_truth_label, write_truth, EvalReport};
pub use feedback::{feedback_labels, FeedbackLoop, ModeRuns};
pub use ingest::{load_allowlist, read_url_list, DropReason, IngestFilter, IngestReport, DEFAULT_PARKING_PATTERNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "parrot")]
    Parrot,
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "typical", alias = "typical_user", alias = "typical-user")]
    TypicalUser,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Parrot, Mode::Standard, Mode::TypicalUser];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Parrot => "parrot",
            Mode::Standard => "standard",
            Mode::TypicalUser => "typical",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parrot" => Ok(Mode::Parrot),
            "standard" => Ok(Mode::Standard),
            "typical" | "typical_user" | "typical-user" => Ok(Mode::TypicalUser),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Phishing,
    NonPhishing,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Phishing => "phishing",
            Verdict::NonPhishing => "non-phishing",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stage that did not go as planned, in the order encountered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Degradation {
    /// The preliminary access could not reach its proxy.
    PreliminaryFailed { reason: String },
    RetrievalFailed { reason: String },
    /// The prompt was sent with no reference cases.
    NoExamples,
    /// Every reply failed validation; the Standard entry was used.
    AdviceUnavailable { reason: String },
    /// The chat backend could not be reached; the Standard entry was used.
    AdviceTransport { reason: String },
    /// The recommendation named no catalog browser.
    ProfileFallback,
    /// The profiled access could not reach its proxy.
    ProxyError { entry: String, reason: String },
    /// No access completed at all.
    FetchFailed { reason: String },
    DetectorFailed { reason: String },
}

/// Wall-clock seconds per stage. Stages a mode skips stay at zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub domain: f64,
    pub preliminary: f64,
    pub retrieval: f64,
    pub advice: f64,
    pub access: f64,
    pub detection: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub record_id: RecordId,
    pub score: f64,
}

/// What the advice step saw and said, enough to replay the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceAudit {
    pub prompt: PromptBundle,
    pub successes: Vec<RetrievedRef>,
    pub failures: Vec<RetrievedRef>,
    pub raw_replies: Vec<String>,
    pub usage: Vec<TokenUsage>,
    pub repaired: bool,
}

impl AdviceAudit {
    fn new(prompt: PromptBundle, examples: &RetrievedExamples) -> Self {
        let refs = |cases: &[crate::retrieval::RetrievedCase]| {
            cases
                .iter()
                .map(|c| RetrievedRef {
                    record_id: c.record_id,
                    score: c.score,
                })
                .collect()
        };
        Self {
            prompt,
            successes: refs(&examples.successes),
            failures: refs(&examples.failures),
            raw_replies: Vec::new(),
            usage: Vec::new(),
            repaired: false,
        }
    }

    /// Re-derives the catalog entry from the accepted reply. `None` when no
    /// reply was accepted.
    pub fn replay(&self, catalog: &Catalog) -> Option<(CatalogEntry, MatchQuality)> {
        let reply = self.raw_replies.last()?;
        let rec = parse_reply(reply).ok()?;
        Some(catalog.match_profile(&rec.profile()))
    }
}

/// The outcome of one URL under one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlVerdictRecord {
    pub url: String,
    pub mode: Mode,
    pub started_at: DateTime<Utc>,
    /// Entry used for the final access.
    pub entry: CatalogEntry,
    /// How the recommendation mapped onto the catalog (Parrot only).
    pub match_quality: Option<MatchQuality>,
    pub recommendation: Option<ProfileRecommendation>,
    /// The Parrot run ended up on the Standard entry.
    pub fallback: bool,
    pub degradations: Vec<Degradation>,
    pub warnings: Vec<String>,
    pub domain: DomainInfo,
    pub preliminary: Option<FetchResult>,
    pub final_fetch: FetchResult,
    pub preliminary_record: Option<CrawlRecord>,
    pub final_record: CrawlRecord,
    pub verdict: Verdict,
    pub timings: StageTimings,
    pub audit: Option<AdviceAudit>,
}

impl UrlVerdictRecord {
    pub fn degraded(&self) -> bool {
        !self.degradations.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid url {url:?}: {message}")]
    InvalidUrl { url: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The collaborators a [`Pipeline`] is built from.
#[derive(Debug, Clone)]
pub struct PipelineParts {
    pub catalog: Arc<Catalog>,
    pub proxies: Arc<ProxyMap>,
    pub store: Arc<CaseStore>,
    pub chat: Arc<dyn ChatBackend>,
    pub fetcher: Arc<dyn FetchBackend>,
    pub domains: DomainCollectors,
    pub detector: Arc<dyn Detector>,
    pub retrieval: RetrievalParams,
    pub repair_retries: u32,
    pub llm_in_flight: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub struct Pipeline {
    catalog: Arc<Catalog>,
    entries: Vec<CatalogEntry>,
    standard: CatalogEntry,
    proxies: Arc<ProxyMap>,
    store: Arc<CaseStore>,
    chat: Arc<dyn ChatBackend>,
    fetcher: Arc<dyn FetchBackend>,
    domains: DomainCollectors,
    detector: Arc<dyn Detector>,
    retrieval: RetrievalParams,
    repair_retries: u32,
    llm_slots: tokio::sync::Semaphore,
    next_id: AtomicU64,
    typical_rng: Mutex<ChaCha8Rng>,
}

impl Pipeline {
    pub fn new(parts: PipelineParts) -> Self {
        let first_id = parts.store.max_record_id().map_or(1, |m| m + 1);
        Self {
            entries: parts.catalog.entries(),
            standard: parts.catalog.standard_entry(),
            catalog: parts.catalog,
            proxies: parts.proxies,
            store: parts.store,
            chat: parts.chat,
            fetcher: parts.fetcher,
            domains: parts.domains,
            detector: parts.detector,
            retrieval: parts.retrieval,
            repair_retries: parts.repair_retries,
            llm_slots: tokio::sync::Semaphore::new(parts.llm_in_flight.max(1)),
            next_id: AtomicU64::new(first_id),
            typical_rng: Mutex::new(ChaCha8Rng::seed_from_u64(parts.seed)),
        }
    }

    /// Builds every collaborator from a config and opens the store.
    pub async fn from_config(cfg: &RunConfig) -> Result<(Self, OpenReport), PipelineError> {
        cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let config = |e: &dyn fmt::Display| PipelineError::Config(e.to_string());
        let catalog = match &cfg.catalog.user_agents {
            Some(p) => Catalog::load(p).map_err(|e| config(&e))?,
            None => Catalog::builtin(),
        };
        let proxies = match &cfg.catalog.proxy_map {
            Some(p) => ProxyMap::load(p).map_err(|e| config(&e))?,
            None => ProxyMap::direct(),
        };
        let embedder = cfg.embedder.build().map_err(|e| config(&e))?;
        for p in [&cfg.store.records, &cfg.store.vectors] {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| config(&format!("{}: {e}", dir.display())))?;
            }
        }
        let (store, report) = CaseStore::open(embedder, &cfg.store.records, &cfg.store.vectors).await?;
        let domains = match cfg.domain.source.as_str() {
            "live" => DomainCollectors::live(&cfg.domain).map_err(|e| config(&e))?,
            "corpus" => {
                let path = cfg.domain.corpus_path.as_deref().ok_or_else(|| config(&"corpus_path missing"))?;
                let corpus = load_scenarios(path).map_err(|e| config(&e))?;
                DomainCollectors::from_source(Arc::new(corpus.domain_source()))
            }
            _ => DomainCollectors::from_source(Arc::new(NullDomainSource)),
        };
        let parts = PipelineParts {
            catalog: Arc::new(catalog),
            proxies: Arc::new(proxies),
            store: Arc::new(store),
            chat: cfg.llm.build().map_err(|e| config(&e))?,
            fetcher: cfg.fetch.build().map_err(|e| config(&e))?,
            domains,
            detector: cfg.detector.build().map_err(|e| config(&e))?,
            retrieval: cfg.retrieval,
            repair_retries: cfg.llm.repair_retries,
            llm_in_flight: cfg.llm.max_in_flight,
            seed: cfg.seed,
        };
        Ok((Self::new(parts), report))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn store(&self) -> &Arc<CaseStore> {
        &self.store
    }

    pub fn domains(&self) -> &DomainCollectors {
        &self.domains
    }

    pub fn proxies(&self) -> &ProxyMap {
        &self.proxies
    }

    pub fn standard_entry(&self) -> &CatalogEntry {
        &self.standard
    }

    /// Next TypicalUser entries, in draw order.
    pub fn draw_typical(&self, n: usize) -> Vec<CatalogEntry> {
        let mut rng = self.typical_rng.lock().expect("rng poisoned");
        (0..n)
            .map(|_| self.entries[rng.random_range(0..self.entries.len())].clone())
            .collect()
    }

    /// Ids stay above everything in the store, including records inserted
    /// after the pipeline was built.
    fn allocate_id(&self) -> RecordId {
        if let Some(max) = self.store.max_record_id() {
            self.next_id.fetch_max(max + 1, Ordering::Relaxed);
        }
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn record_from(&self, url: &str, domain: &DomainInfo, fetch: &FetchResult) -> CrawlRecord {
        CrawlRecord {
            id: self.allocate_id(),
            url: url.to_string(),
            fetched_at: Utc::now(),
            domain: domain.clone(),
            network: fetch.network.clone(),
            html: fetch.html.clone(),
            environment: fetch.environment.clone(),
            label: Label::Unlabeled,
        }
    }

    fn planned_environment(&self, entry: &CatalogEntry) -> EnvironmentInfo {
        plan_for(entry, &HeaderList::new(), &self.proxies)
            .map(|p| p.environment)
            .unwrap_or_default()
    }

    /// Fetches `url` through one entry and assembles the crawl record, with
    /// no advice and no detection. Used for sweeps and seeding.
    pub async fn crawl_with_entry(
        &self,
        url: &str,
        entry: &CatalogEntry,
    ) -> Result<(CrawlRecord, FetchResult), PipelineError> {
        let parsed = parse_url(url)?;
        let domain = collect_domain_info(&parsed, &self.domains)
            .await
            .map_err(|e| invalid(url, &e))?;
        let mut fetch = match profiled_access(&parsed, entry, &HeaderList::new(), self.fetcher.as_ref(), &self.proxies).await {
            Ok(f) => f,
            Err(CrawlError::Proxy { proxy, message }) => {
                FetchResult::failed(self.planned_environment(entry), format!("proxy {proxy}: {message}"))
            }
            Err(e) => return Err(PipelineError::Config(e.to_string())),
        };
        fetch.warnings.extend(domain.warnings);
        let record = self.record_from(url, &domain.info, &fetch);
        Ok((record, fetch))
    }

    pub async fn process_url(&self, url: &str, mode: Mode) -> Result<UrlVerdictRecord, PipelineError> {
        let fixed = (mode == Mode::TypicalUser).then(|| self.draw_typical(1).remove(0));
        self.process_inner(url, mode, fixed).await
    }

    /// Processes `urls` with up to `concurrency` in flight. Results come
    /// back in input order. TypicalUser entries are drawn up front in input
    /// order, so the sequence does not depend on scheduling.
    pub async fn run_batch(
        self: &Arc<Self>,
        urls: &[String],
        mode: Mode,
        concurrency: usize,
    ) -> Vec<Result<UrlVerdictRecord, PipelineError>> {
        let mut fixed: Vec<Option<CatalogEntry>> = if mode == Mode::TypicalUser {
            self.draw_typical(urls.len()).into_iter().map(Some).collect()
        } else {
            vec![None; urls.len()]
        };
        let slots = Arc::new(tokio::sync::Semaphore::new(concurrency.max(1)));
        let mut tasks = tokio::task::JoinSet::new();
        for (i, url) in urls.iter().enumerate() {
            let this = Arc::clone(self);
            let slots = Arc::clone(&slots);
            let url = url.clone();
            let entry = fixed[i].take();
            tasks.spawn(async move {
                let _permit = slots.acquire_owned().await.expect("semaphore open");
                (i, this.process_inner(&url, mode, entry).await)
            });
        }
        let mut out: Vec<Option<Result<UrlVerdictRecord, PipelineError>>> = (0..urls.len()).map(|_| None).collect();
        while let Some(joined) = tasks.join_next().await {
            match joined {
                Ok((i, r)) => out[i] = Some(r),
                Err(e) => std::panic::resume_unwind(e.into_panic()),
            }
        }
        out.into_iter().map(|r| r.expect("every task reported")).collect()
    }

    async fn process_inner(
        &self,
        url: &str,
        mode: Mode,
        fixed: Option<CatalogEntry>,
    ) -> Result<UrlVerdictRecord, PipelineError> {
        let started = Instant::now();
        let started_at = Utc::now();
        let parsed = parse_url(url)?;
        let mut timings = StageTimings::default();
        let mut degradations = Vec::new();
        let mut warnings = Vec::new();

        let t = Instant::now();
        let domain = collect_domain_info(&parsed, &self.domains)
            .await
            .map_err(|e| invalid(url, &e))?;
        timings.domain = t.elapsed().as_secs_f64();
        warnings.extend(domain.warnings);
        let domain = domain.info;

        let mut preliminary = None;
        let mut preliminary_record = None;
        let mut recommendation = None;
        let mut match_quality = None;
        let mut audit = None;
        let mut fallback = false;
        let mut extra = HeaderList::new();

        let entry = match mode {
            Mode::Standard => self.standard.clone(),
            Mode::TypicalUser => fixed.unwrap_or_else(|| self.draw_typical(1).remove(0)),
            Mode::Parrot => {
                let t = Instant::now();
                let pre = match profiled_access(&parsed, &self.standard, &HeaderList::new(), self.fetcher.as_ref(), &self.proxies).await {
                    Ok(f) => f,
                    Err(CrawlError::Proxy { proxy, message }) => {
                        let reason = format!("proxy {proxy}: {message}");
                        degradations.push(Degradation::PreliminaryFailed { reason: reason.clone() });
                        FetchResult::failed(self.planned_environment(&self.standard), reason)
                    }
                    Err(e) => return Err(PipelineError::Config(e.to_string())),
                };
                timings.preliminary = t.elapsed().as_secs_f64();
                let pre_record = self.record_from(url, &domain, &pre);

                let t = Instant::now();
                let examples = match self.store.retrieve_examples(&pre_record, &self.retrieval).await {
                    Ok(ex) => ex,
                    Err(e) => {
                        degradations.push(Degradation::RetrievalFailed { reason: e.to_string() });
                        RetrievedExamples::default()
                    }
                };
                timings.retrieval = t.elapsed().as_secs_f64();
                if examples.is_empty() {
                    degradations.push(Degradation::NoExamples);
                }

                let t = Instant::now();
                let bundle = build_prompt(url, &examples.success_views(), &examples.failure_views());
                let mut trail = AdviceAudit::new(bundle, &examples);
                let advice = {
                    let _slot = self.llm_slots.acquire().await.expect("semaphore open");
                    request_profile(self.chat.as_ref(), &trail.prompt, self.repair_retries).await
                };
                timings.advice = t.elapsed().as_secs_f64();
                let chosen = match advice {
                    Ok(a) => {
                        trail.raw_replies = a.raw_replies;
                        trail.usage = a.usage;
                        trail.repaired = a.repaired;
                        let (entry, quality) = self.catalog.match_profile(&a.recommendation.profile());
                        if quality == MatchQuality::Fallback {
                            degradations.push(Degradation::ProfileFallback);
                        }
                        extra = a.recommendation.http_header.clone();
                        match_quality = Some(quality);
                        recommendation = Some(a.recommendation);
                        entry
                    }
                    Err(e) => {
                        trail.raw_replies = e.raw_replies().to_vec();
                        degradations.push(match &e {
                            AdviceError::Unavailable { .. } => Degradation::AdviceUnavailable { reason: e.to_string() },
                            AdviceError::Transport { .. } => Degradation::AdviceTransport { reason: e.to_string() },
                        });
                        self.standard.clone()
                    }
                };
                preliminary = Some(pre);
                preliminary_record = Some(pre_record);
                audit = Some(trail);
                chosen
            }
        };

        let t = Instant::now();
        let mut entry = entry;
        let mut final_fetch = match profiled_access(&parsed, &entry, &extra, self.fetcher.as_ref(), &self.proxies).await {
            Ok(f) => Some(f),
            Err(CrawlError::Proxy { proxy, message }) => {
                degradations.push(Degradation::ProxyError {
                    entry: entry.label(),
                    reason: format!("proxy {proxy}: {message}"),
                });
                None
            }
            Err(e) => return Err(PipelineError::Config(e.to_string())),
        };
        if final_fetch.is_none() && mode == Mode::Parrot && entry != self.standard {
            entry = self.standard.clone();
            extra = HeaderList::new();
            final_fetch = match profiled_access(&parsed, &entry, &extra, self.fetcher.as_ref(), &self.proxies).await {
                Ok(f) => Some(f),
                Err(CrawlError::Proxy { proxy, message }) => {
                    degradations.push(Degradation::ProxyError {
                        entry: entry.label(),
                        reason: format!("proxy {proxy}: {message}"),
                    });
                    None
                }
                Err(e) => return Err(PipelineError::Config(e.to_string())),
            };
        }
        let final_fetch = final_fetch.unwrap_or_else(|| {
            let reason = "every egress for this URL was unreachable".to_string();
            degradations.push(Degradation::FetchFailed { reason: reason.clone() });
            FetchResult::failed(self.planned_environment(&entry), reason)
        });
        timings.access = t.elapsed().as_secs_f64();
        if mode == Mode::Parrot {
            fallback = entry == self.standard;
        }
        let final_record = self.record_from(url, &domain, &final_fetch);

        let t = Instant::now();
        let verdict = match self.detector.judge(url, &final_fetch).await {
            Ok(v) => v,
            Err(reason) => {
                degradations.push(Degradation::DetectorFailed { reason });
                Verdict::NonPhishing
            }
        };
        timings.detection = t.elapsed().as_secs_f64();
        timings.total = started.elapsed().as_secs_f64();

        Ok(UrlVerdictRecord {
            url: url.to_string(),
            mode,
            started_at,
            entry,
            match_quality,
            recommendation,
            fallback,
            degradations,
            warnings,
            domain,
            preliminary,
            final_fetch,
            preliminary_record,
            final_record,
            verdict,
            timings,
            audit,
        })
    }
}

fn parse_url(url: &str) -> Result<Url, PipelineError> {
    let parsed = Url::parse(url).map_err(|e| invalid(url, &e))?;
    if !matches!(parsed.scheme(), "http" | "https") || parsed.host_str().is_none() {
        return Err(PipelineError::InvalidUrl {
            url: url.to_string(),
            message: "expected an http(s) URL with a host".into(),
        });
    }
    Ok(parsed)
}

fn invalid(url: &str, e: &dyn fmt::Display) -> PipelineError {
    PipelineError::InvalidUrl {
        url: url.to_string(),
        message: e.to_string(),
    }
}
