use std::collections::HashMap;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use parrot::catalog::Catalog;
use parrot::cloaksim::{generate_corpus, serve, shim_proxy_map, start_shim_on, SimOptions};
use parrot::crawler::HostOverride;
use parrot::jsonl;
use parrot::pipeline::{
    evaluate_records, load_allowlist, load_truth, read_url_list, write_truth, FeedbackLoop, IngestFilter, Mode, ModeRuns,
    Pipeline, RunConfig, UrlVerdictRecord, Verdict,
};
use parrot::records::{self, Label};
use parrot::retrieval::reindex;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "parrot", version, about = "Adaptive anti-cloaking crawl orchestrator")]
struct Cli {
    /// Run configuration (TOML). Defaults to ./parrot.toml when present.
    #[arg(long, short, global = true, env = "PARROT_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bulk-insert labelled crawl records into the case store.
    Seed {
        #[arg(long)]
        records: PathBuf,
        /// Label for records that carry none; labelled records keep theirs.
        #[arg(long, value_parser = parse_label)]
        label: Option<Label>,
    },
    /// Crawl a URL list in one mode and write per-URL verdict records.
    Crawl {
        #[arg(long, default_value = "parrot")]
        mode: Mode,
        #[arg(long)]
        urls: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// URLs in flight; overrides the config.
        #[arg(long)]
        concurrency: Option<usize>,
        /// Skip the NXDOMAIN / popular-domain / parking filter.
        #[arg(long)]
        no_filter: bool,
    },
    /// Score the runs in a directory against a truth file.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Emit the reports as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Feed cloaking evidence from a three-mode run directory back into the store.
    Feedback {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Serve a generated cloaking corpus and a proxy shim until interrupted.
    Simulate {
        #[arg(long, default_value_t = 8)]
        families: usize,
        #[arg(long, default_value_t = 25)]
        per_family: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 0)]
        shim_port: u16,
        /// Where to write the corpus, URL list, truth file and a ready config.
        #[arg(long, default_value = "sim")]
        out: PathBuf,
    },
    /// Rebuild the vector sidecar from the record file.
    Reindex,
    /// Inspect the browser/egress catalog.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Print every entry.
    List {
        /// Include the User-Agent string.
        #[arg(long)]
        user_agents: bool,
    },
}

fn parse_label(s: &str) -> Result<Label, String> {
    match s.to_ascii_lowercase().as_str() {
        "success" => Ok(Label::Success),
        "failed" | "failure" => Ok(Label::Failed),
        _ => Err(format!("expected success or failed, got {s:?}")),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let path = match path {
        Some(p) => Some(p.to_path_buf()),
        None => Some(PathBuf::from("parrot.toml")).filter(|p| p.exists()),
    };
    match path {
        Some(p) => RunConfig::load(&p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

async fn open_pipeline(cfg: &RunConfig) -> Result<Arc<Pipeline>> {
    let (pipeline, report) = Pipeline::from_config(cfg).await?;
    tracing::info!(
        loaded = report.loaded,
        reembedded = report.reembedded,
        truncated = report.truncated_lines,
        "case store opened"
    );
    Ok(Arc::new(pipeline))
}

fn run_file(dir: &Path, mode: Mode) -> PathBuf {
    dir.join(format!("{}.jsonl", mode.as_str()))
}

fn read_runs(dir: &Path, mode: Mode) -> Result<Option<Vec<UrlVerdictRecord>>> {
    let path = run_file(dir, mode);
    if !path.exists() {
        return Ok(None);
    }
    let loaded = jsonl::read::<UrlVerdictRecord>(&path)?;
    if loaded.truncated_tail > 0 {
        tracing::warn!(path = %path.display(), "ignored an incomplete final line");
    }
    Ok(Some(loaded.items))
}

async fn seed(cfg: &RunConfig, path: &Path, label: Option<Label>) -> Result<()> {
    let loaded = records::load(path).with_context(|| format!("reading {}", path.display()))?;
    let pipeline = open_pipeline(cfg).await?;
    let store = pipeline.store();
    let (mut inserted, mut skipped) = (0, 0);
    for mut record in loaded.items {
        let label = match record.label {
            Label::Unlabeled => label.unwrap_or(Label::Unlabeled),
            own => own,
        };
        if label == Label::Unlabeled {
            skipped += 1;
            continue;
        }
        if store.contains(record.id) {
            record.id = store.max_record_id().map_or(1, |m| m + 1);
        }
        store.insert(record, label).await?;
        inserted += 1;
    }
    println!(
        "inserted {inserted} record(s), skipped {skipped} unlabelled; store holds {} successes and {} failures",
        store.count(Label::Success),
        store.count(Label::Failed)
    );
    Ok(())
}

async fn crawl(cfg: &RunConfig, mode: Mode, urls: &Path, out: &Path, concurrency: Option<usize>, no_filter: bool) -> Result<()> {
    let pipeline = open_pipeline(cfg).await?;
    let input = read_url_list(urls).map_err(anyhow::Error::msg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let kept = if no_filter {
        input
    } else {
        let allowlist = match &cfg.ingest.allowlist {
            Some(p) => load_allowlist(p).map_err(anyhow::Error::msg)?,
            None => Vec::new(),
        };
        let filter = IngestFilter::new(allowlist, &cfg.ingest.parking_patterns).map_err(anyhow::Error::msg)?;
        let report = filter.run(&input, pipeline.domains().dns.as_ref()).await;
        for w in &report.warnings {
            tracing::warn!("{w}");
        }
        let dropped: Vec<serde_json::Value> = report
            .dropped
            .iter()
            .map(|(url, reason)| serde_json::json!({ "url": url, "reason": reason.as_str() }))
            .collect();
        jsonl::write_all(&out.join(format!("{}.dropped.jsonl", mode.as_str())), &dropped)?;
        println!("ingest kept {} of {} URL(s)", report.kept.len(), input.len());
        report.kept
    };

    let results = pipeline.run_batch(&kept, mode, concurrency.unwrap_or(cfg.concurrency)).await;
    let mut written = Vec::with_capacity(kept.len());
    let (mut phishing, mut degraded, mut errors) = (0, 0, 0);
    for (url, result) in kept.iter().zip(results) {
        match result {
            Ok(record) => {
                phishing += usize::from(record.verdict == Verdict::Phishing);
                degraded += usize::from(record.degraded());
                println!("{}\t{}\t{}", record.verdict.as_str(), record.entry.label(), url);
                written.push(record);
            }
            Err(e) => {
                errors += 1;
                eprintln!("error\t{url}\t{e}");
            }
        }
    }
    jsonl::write_all(&run_file(out, mode), &written)?;
    println!(
        "{mode}: {phishing} phishing of {} processed, {degraded} degraded, {errors} error(s); written to {}",
        kept.len() - errors,
        run_file(out, mode).display()
    );
    Ok(())
}

fn eval(runs: &Path, truth: &Path, json: bool) -> Result<()> {
    let truth = load_truth(truth).map_err(anyhow::Error::msg)?;
    let mut any = false;
    for mode in Mode::ALL {
        let Some(records) = read_runs(runs, mode)? else { continue };
        any = true;
        let report = evaluate_records(&records, &truth);
        if json {
            println!("{}", serde_json::json!({ "mode": mode.as_str(), "report": report }));
        } else {
            println!("== {mode} ({} URLs)\n{report}\n", report.total());
        }
    }
    if !any {
        bail!("no run files (parrot.jsonl, standard.jsonl, typical.jsonl) in {}", runs.display());
    }
    Ok(())
}

async fn feedback(cfg: &RunConfig, runs: &Path, truth: Option<&Path>) -> Result<()> {
    if !cfg.feedback {
        bail!("feedback is disabled in the configuration");
    }
    let mut by_mode = HashMap::new();
    for mode in Mode::ALL {
        let records = read_runs(runs, mode)?.with_context(|| format!("missing {}", run_file(runs, mode).display()))?;
        by_mode.insert(mode, records.into_iter().map(|r| (r.url.clone(), r)).collect::<HashMap<_, _>>());
    }
    let truth = match truth {
        Some(p) => load_truth(p).map_err(anyhow::Error::msg)?,
        None => HashMap::new(),
    };
    let pipeline = open_pipeline(cfg).await?;
    let feedback = FeedbackLoop::new(pipeline.store().clone());
    let mut urls: Vec<&String> = by_mode[&Mode::Parrot].keys().collect();
    urls.sort();
    let mut inserted = 0;
    for url in urls {
        let (Some(standard), Some(typical)) = (by_mode[&Mode::Standard].get(url), by_mode[&Mode::TypicalUser].get(url)) else {
            tracing::warn!(%url, "not crawled in every mode; skipped");
            continue;
        };
        let runs = ModeRuns {
            parrot: &by_mode[&Mode::Parrot][url],
            standard,
            typical,
        };
        for (id, label) in feedback.apply(runs, truth.get(url).copied()).await? {
            println!("{}\t{id}\t{url}", label_name(label));
            inserted += 1;
        }
    }
    println!("inserted {inserted} record(s); store now holds {}", pipeline.store().len());
    Ok(())
}

fn label_name(label: Label) -> &'static str {
    match label {
        Label::Success => "success",
        Label::Failed => "failed",
        Label::Unlabeled => "unlabeled",
    }
}

async fn simulate(families: usize, per_family: usize, seed: u64, port: u16, shim_port: u16, out: &Path) -> Result<()> {
    if families == 0 || per_family == 0 {
        bail!("--families and --per-family must be at least 1");
    }
    let corpus = generate_corpus(families, per_family, seed);
    let sim = serve(
        &corpus,
        SimOptions {
            port,
            ..SimOptions::default()
        },
    )
    .await
    .with_context(|| format!("binding simulator on port {port}"))?;
    let shim = start_shim_on(sim.addr(), SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), shim_port))
        .await
        .with_context(|| format!("binding proxy shim on port {shim_port}"))?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    corpus.save(&out.join("corpus.json"))?;
    std::fs::write(out.join("proxy_map.toml"), shim_proxy_map(shim.addr()).to_toml())?;
    let urls: Vec<String> = corpus.scenarios.iter().map(|s| s.url(sim.port())).collect();
    let legit: Vec<String> = corpus.legit.iter().map(|l| format!("http://{}:{}/", l.host, sim.port())).collect();
    std::fs::write(out.join("urls.txt"), urls.iter().chain(&legit).map(|u| format!("{u}\n")).collect::<String>())?;
    let truth: Vec<(String, Verdict)> = urls
        .iter()
        .map(|u| (u.clone(), Verdict::Phishing))
        .chain(legit.iter().map(|u| (u.clone(), Verdict::NonPhishing)))
        .collect();
    write_truth(&out.join("truth.csv"), &truth).map_err(anyhow::Error::msg)?;

    let mut cfg = RunConfig::default();
    cfg.llm.backend = "mock".into();
    cfg.domain.source = "corpus".into();
    cfg.domain.corpus_path = Some("corpus.json".into());
    cfg.catalog.proxy_map = Some("proxy_map.toml".into());
    cfg.fetch.host_overrides = vec![HostOverride {
        suffix: ".test".into(),
        addr: IpAddr::V4(Ipv4Addr::LOCALHOST),
    }];
    std::fs::write(out.join("parrot.toml"), cfg.to_toml())?;

    println!("simulator  http://{}  ({} scenarios, {} legit sites)", sim.addr(), corpus.scenarios.len(), corpus.legit.len());
    println!("proxy shim http://{}", shim.addr());
    println!("wrote corpus.json, proxy_map.toml, urls.txt, truth.csv and parrot.toml to {}", out.display());
    println!("try: parrot --config {}/parrot.toml crawl --mode standard --urls {0}/urls.txt --out runs", out.display());
    tokio::signal::ctrl_c().await?;
    shim.shutdown().await;
    sim.shutdown().await;
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            families,
            per_family,
            seed,
            port,
            shim_port,
            out,
        } => simulate(families, per_family, seed, port, shim_port, &out).await,
        Command::Catalog {
            command: CatalogCommand::List { user_agents },
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let catalog = match &cfg.catalog.user_agents {
                Some(p) => Catalog::load(p)?,
                None => Catalog::builtin(),
            };
            let mut out = std::io::stdout().lock();
            for (i, e) in catalog.entries().iter().enumerate() {
                let mut row = format!("{:>3}\t{}\t{}\t{}\t{}", i + 1, e.os.name(), e.browser.name(), e.location.name(), e.network.name());
                if user_agents {
                    row.push('\t');
                    row.push_str(&e.user_agent);
                }
                // A closed pipe (`| head`) ends the listing quietly.
                if writeln!(out, "{row}").is_err() {
                    break;
                }
            }
            Ok(())
        }
        Command::Eval { runs, truth, json } => eval(&runs, &truth, json),
        command => {
            let cfg = load_config(cli.config.as_deref())?;
            match command {
                Command::Seed { records, label } => seed(&cfg, &records, label).await,
                Command::Crawl {
                    mode,
                    urls,
                    out,
                    concurrency,
                    no_filter,
                } => crawl(&cfg, mode, &urls, &out, concurrency, no_filter).await,
                Command::Feedback { runs, truth } => feedback(&cfg, &runs, truth.as_deref()).await,
                Command::Reindex => {
                    let embedder = cfg.embedder.build()?;
                    let n = reindex(embedder.as_ref(), &cfg.store.records, &cfg.store.vectors).await?;
                    println!("reindexed {n} record(s) into {}", cfg.store.vectors.display());
                    Ok(())
                }
                _ => unreachable!("handled above"),
            }
        }
    }
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("PARROT_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()).await {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
