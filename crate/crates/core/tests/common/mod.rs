//! Closed-loop lab shared by the integration tests: a simulator corpus, the
//! simulator, the credential shim in front of it, and pipelines wired to
//! both.
#![allow(dead_code)]

use std::net::{IpAddr, Ipv4Addr};
use std::sync::Arc;

use parrot::advisor::{ChatBackend, MockChat};
use parrot::catalog::{Catalog, CatalogEntry, ProxyMap};
use parrot::cloaksim::{generate_corpus, serve, shim_proxy_map, start_shim, CloakScenario, Corpus, ShimServer, SimOptions, SimServer};
use parrot::crawler::{DomainCollectors, FetchBackend, HostOverride, PlainHttpBackend, PlainHttpConfig, Timeouts};
use parrot::embedding::LocalEmbedder;
use parrot::pipeline::{MarkerDetector, Pipeline, PipelineParts};
use parrot::records::{CrawlRecord, Label};
use parrot::retrieval::{CaseStore, RetrievalParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Lab {
    pub corpus: Corpus,
    pub sim: SimServer,
    pub shim: ShimServer,
    pub catalog: Arc<Catalog>,
    pub proxies: Arc<ProxyMap>,
    pub fetcher: Arc<dyn FetchBackend>,
}

impl Lab {
    pub async fn start(families: usize, per_family: usize, seed: u64) -> Lab {
        let corpus = generate_corpus(families, per_family, seed);
        let sim = serve(&corpus, SimOptions::default()).await.expect("simulator starts");
        let shim = start_shim(sim.addr()).await.expect("shim starts");
        let fetcher = PlainHttpBackend::new(PlainHttpConfig {
            timeouts: Timeouts {
                connect: 5.0,
                nav: 15.0,
                settle: 0.1,
            },
            host_overrides: vec![HostOverride {
                suffix: ".test".into(),
                addr: IpAddr::V4(Ipv4Addr::LOCALHOST),
            }],
            ..PlainHttpConfig::default()
        })
        .expect("fetch backend builds");
        Lab {
            proxies: Arc::new(shim_proxy_map(shim.addr())),
            catalog: Arc::new(Catalog::builtin()),
            fetcher: Arc::new(fetcher),
            corpus,
            sim,
            shim,
        }
    }

    pub fn url(&self, s: &CloakScenario) -> String {
        s.url(self.sim.port())
    }

    pub fn legit_urls(&self) -> Vec<String> {
        self.corpus
            .legit
            .iter()
            .map(|l| format!("http://{}:{}/", l.host, self.sim.port()))
            .collect()
    }

    /// First `seeded` scenarios of every family and the rest.
    pub fn split(&self, seeded: usize) -> (Vec<&CloakScenario>, Vec<&CloakScenario>) {
        let mut seed = Vec::new();
        let mut held = Vec::new();
        for family in self.corpus.families() {
            let members = self.corpus.family(&family);
            let (a, b) = members.split_at(seeded.min(members.len()));
            seed.extend_from_slice(a);
            held.extend_from_slice(b);
        }
        (seed, held)
    }

    /// Collaborators wired to this lab; tests swap single parts out.
    pub fn parts(&self, store: Arc<CaseStore>, chat: Arc<dyn ChatBackend>, seed: u64) -> PipelineParts {
        PipelineParts {
            catalog: self.catalog.clone(),
            proxies: self.proxies.clone(),
            store,
            chat,
            fetcher: self.fetcher.clone(),
            domains: DomainCollectors::from_source(Arc::new(self.corpus.domain_source())),
            detector: Arc::new(MarkerDetector::default()),
            retrieval: RetrievalParams::default(),
            repair_retries: 1,
            llm_in_flight: 4,
            seed,
        }
    }

    pub fn pipeline(&self, store: Arc<CaseStore>, chat: Arc<dyn ChatBackend>, seed: u64) -> Arc<Pipeline> {
        Arc::new(Pipeline::new(self.parts(store, chat, seed)))
    }

    pub fn mock_pipeline(&self, store: Arc<CaseStore>) -> Arc<Pipeline> {
        self.pipeline(store, Arc::new(MockChat::new()), 42)
    }
}

pub fn local_store() -> Arc<CaseStore> {
    Arc::new(CaseStore::in_memory(Arc::new(LocalEmbedder::new(256))))
}

/// Copies every entry of `store` into a fresh in-memory store.
pub fn clone_store(store: &CaseStore) -> Arc<CaseStore> {
    let copy = local_store();
    for e in store.snapshot() {
        copy.insert_precomputed(e.record.clone(), e.vectors.clone()).expect("copy entry");
    }
    copy
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SweepSummary {
    pub crawled: usize,
    pub successes: usize,
    pub failures_stored: usize,
    /// Accesses whose page disagreed with the scenario's predicate table.
    pub oracle_mismatches: usize,
}

/// Crawls every scenario under every catalog entry, labels each access by
/// the scenario's predicate table and stores all successes plus
/// `failures_per_scenario` sampled failures.
pub async fn sweep_and_seed(
    pipeline: &Arc<Pipeline>,
    lab: &Lab,
    scenarios: &[&CloakScenario],
    failures_per_scenario: usize,
    seed: u64,
) -> SweepSummary {
    let entries = lab.catalog.entries();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = SweepSummary::default();
    let slots = Arc::new(tokio::sync::Semaphore::new(32));
    for s in scenarios {
        let url = lab.url(s);
        let mut tasks = tokio::task::JoinSet::new();
        for (i, entry) in entries.iter().enumerate() {
            let (p, url, entry, slots) = (pipeline.clone(), url.clone(), entry.clone(), slots.clone());
            tasks.spawn(async move {
                let _permit = slots.acquire_owned().await.unwrap();
                let (record, fetch) = p.crawl_with_entry(&url, &entry).await.expect("sweep access");
                (i, record, fetch.document.contains(&parrot::cloaksim::MARKER_PREFIX.to_string()))
            });
        }
        let mut results: Vec<Option<(CrawlRecord, bool)>> = vec![None; entries.len()];
        while let Some(done) = tasks.join_next().await {
            let (i, record, marked) = done.expect("sweep task");
            results[i] = Some((record, marked));
        }
        let mut passed = Vec::new();
        let mut failed = Vec::new();
        for (entry, r) in entries.iter().zip(results) {
            let (record, marked) = r.expect("every entry crawled");
            let pass = s.passes_entry(entry);
            if pass != marked {
                summary.oracle_mismatches += 1;
            }
            summary.crawled += 1;
            if pass {
                passed.push(record);
            } else {
                failed.push(record);
            }
        }
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, failed.len(), failures_per_scenario.min(failed.len())).into_vec();
        picks.sort_unstable();
        let to_store = passed
            .into_iter()
            .map(|r| (r, Label::Success))
            .chain(picks.into_iter().map(|i| (failed[i].clone(), Label::Failed)));
        for (mut record, label) in to_store {
            // Ids follow insertion order so reruns build identical stores.
            record.id = pipeline.store().max_record_id().map_or(1, |m| m + 1);
            match label {
                Label::Success => summary.successes += 1,
                _ => summary.failures_stored += 1,
            }
            pipeline.store().insert(record, label).await.expect("store insert");
        }
    }
    summary
}

pub fn entry_label(e: &CatalogEntry) -> String {
    format!("{} / {} / {} / {}", e.os.name(), e.browser.name(), e.location.name(), e.network.name())
}
