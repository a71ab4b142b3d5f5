use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;
use std::process::{Command, Output};

use chrono::Utc;
use parrot::cloaksim::{generate_corpus, serve, shim_proxy_map, start_shim, SimOptions};
use parrot::crawler::HostOverride;
use parrot::pipeline::{write_truth, RunConfig, Verdict};
use parrot::records::{persist, CrawlRecord, DomainInfo, Label};

fn parrot(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_parrot"))
        .args(args)
        .env_remove("PARROT_CONFIG")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "parrot {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let path = dir.join("parrot.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path.display().to_string()
}

#[test]
fn catalog_list_prints_every_entry() {
    let out = parrot(&["catalog", "list"]);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 510);
    assert!(text.lines().all(|l| l.split('\t').count() == 5));
    let with_ua = stdout(&parrot(&["catalog", "list", "--user-agents"]));
    assert!(with_ua.lines().all(|l| l.contains("Mozilla/5.0")));
}

#[test]
fn seed_then_reindex_rebuilds_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<CrawlRecord> = (1..=3)
        .map(|id| CrawlRecord {
            id,
            url: format!("http://seed-{id}.test/"),
            fetched_at: Utc::now(),
            domain: DomainInfo::for_host(&format!("seed-{id}.test")).unwrap(),
            network: Default::default(),
            html: Default::default(),
            environment: Default::default(),
            label: [Label::Success, Label::Failed, Label::Unlabeled][id as usize - 1],
        })
        .collect();
    let input = dir.path().join("seed.jsonl");
    persist(&input, &records).unwrap();
    let config = write_config(dir.path(), &RunConfig::default());

    let seeded = stdout(&parrot(&["--config", &config, "seed", "--records", input.to_str().unwrap()]));
    assert!(seeded.contains("inserted 2 record(s), skipped 1 unlabelled"), "{seeded}");
    assert!(seeded.contains("1 successes and 1 failures"), "{seeded}");
    // Ids already in the store are reassigned; --label only fills in missing labels.
    let again = stdout(&parrot(&["--config", &config, "seed", "--records", input.to_str().unwrap(), "--label", "failed"]));
    assert!(again.contains("inserted 3 record(s), skipped 0"), "{again}");
    assert!(again.contains("2 successes and 3 failures"), "{again}");

    let sidecar = dir.path().join("store/vectors.jsonl");
    let before = std::fs::read_to_string(&sidecar).unwrap();
    std::fs::remove_file(&sidecar).unwrap();
    let out = stdout(&parrot(&["--config", &config, "reindex"]));
    assert!(out.contains("reindexed 5 record(s)"), "{out}");
    assert_eq!(std::fs::read_to_string(&sidecar).unwrap(), before);
}

#[test]
fn crawl_eval_and_feedback_against_the_simulator() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let corpus = generate_corpus(2, 2, 7);
    let (sim, shim) = rt.block_on(async {
        let sim = serve(&corpus, SimOptions::default()).await.unwrap();
        let shim = start_shim(sim.addr()).await.unwrap();
        (sim, shim)
    });
    let dir = tempfile::tempdir().unwrap();
    corpus.save(&dir.path().join("corpus.json")).unwrap();
    std::fs::write(dir.path().join("proxy_map.toml"), shim_proxy_map(shim.addr()).to_toml()).unwrap();
    let scenario_urls: Vec<String> = corpus.scenarios.iter().map(|s| s.url(sim.port())).collect();
    let legit = format!("http://{}:{}/", corpus.legit[0].host, sim.port());
    let mut urls = scenario_urls.clone();
    urls.push(legit.clone());
    urls.push("not a url".into());
    std::fs::write(dir.path().join("urls.txt"), urls.join("\n")).unwrap();
    let mut truth: Vec<(String, Verdict)> = scenario_urls.iter().map(|u| (u.clone(), Verdict::Phishing)).collect();
    truth.push((legit, Verdict::NonPhishing));
    write_truth(&dir.path().join("truth.csv"), &truth).unwrap();

    let mut cfg = RunConfig::default();
    cfg.llm.backend = "mock".into();
    cfg.domain.source = "corpus".into();
    cfg.domain.corpus_path = Some("corpus.json".into());
    cfg.catalog.proxy_map = Some("proxy_map.toml".into());
    cfg.fetch.host_overrides = vec![HostOverride {
        suffix: ".test".into(),
        addr: IpAddr::V4(Ipv4Addr::LOCALHOST),
    }];
    let config = write_config(dir.path(), &cfg);
    let d = |name: &str| dir.path().join(name).display().to_string();

    for mode in ["standard", "typical", "parrot"] {
        let out = stdout(&parrot(&["--config", &config, "crawl", "--mode", mode, "--urls", &d("urls.txt"), "--out", &d("runs")]));
        assert!(out.contains("ingest kept 5 of 6 URL(s)"), "{out}");
    }
    let dropped = std::fs::read_to_string(dir.path().join("runs/parrot.dropped.jsonl")).unwrap();
    assert!(dropped.contains("invalid-url"), "{dropped}");
    let parrot_runs = std::fs::read_to_string(dir.path().join("runs/parrot.jsonl")).unwrap();
    assert_eq!(parrot_runs.lines().count(), 5);

    // An empty store leaves Parrot on the Standard entry, so it sees what Standard sees.
    let report = stdout(&parrot(&["eval", "--runs", &d("runs"), "--truth", &d("truth.csv")]));
    assert_eq!(report.matches("TP 0  FP 0  TN 1  FN 4").count(), 3, "{report}");
    assert!(report.contains("precision  undefined"), "{report}");
    let json = stdout(&parrot(&["eval", "--runs", &d("runs"), "--truth", &d("truth.csv"), "--json"]));
    let first: serde_json::Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
    assert_eq!(first["report"]["accuracy"], 0.2);

    // Every missed phishing URL becomes a Failed case, once.
    let fed = stdout(&parrot(&["--config", &config, "feedback", "--runs", &d("runs"), "--truth", &d("truth.csv")]));
    assert!(fed.contains("inserted 4 record(s)"), "{fed}");
    let refed = stdout(&parrot(&["--config", &config, "feedback", "--runs", &d("runs"), "--truth", &d("truth.csv")]));
    assert!(refed.contains("inserted 0 record(s); store now holds 4"), "{refed}");
    drop((sim, shim));
}

#[test]
fn missing_run_files_are_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("truth.csv"), "url,label\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_parrot"))
        .args(["eval", "--runs", dir.path().to_str().unwrap(), "--truth", dir.path().join("truth.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no run files"));
}
