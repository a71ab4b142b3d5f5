use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::Verdict;
use crate::cloaksim::MARKER_PREFIX;
use crate::crawler::FetchResult;

/// Judges a fetched page.
#[async_trait]
pub trait Detector: Send + Sync + std::fmt::Debug {
    async fn judge(&self, url: &str, fetch: &FetchResult) -> Result<Verdict, String>;
}

/// Flags a page as phishing when its document contains any marker token.
#[derive(Debug, Clone)]
pub struct MarkerDetector {
    tokens: Vec<String>,
}

impl Default for MarkerDetector {
    fn default() -> Self {
        Self::new(vec![MARKER_PREFIX.to_string()])
    }
}

impl MarkerDetector {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens }
    }

    pub fn verdict(&self, fetch: &FetchResult) -> Verdict {
        let hit = self
            .tokens
            .iter()
            .any(|t| fetch.document.contains(t.as_str()) || fetch.html.visible_text.contains(t.as_str()));
        if hit {
            Verdict::Phishing
        } else {
            Verdict::NonPhishing
        }
    }
}

#[async_trait]
impl Detector for MarkerDetector {
    async fn judge(&self, _url: &str, fetch: &FetchResult) -> Result<Verdict, String> {
        Ok(self.verdict(fetch))
    }
}

/// Runs an external program on a result directory and reads a one-word
/// verdict from its standard output.
///
/// The directory holds `url.txt`, `page.html`, `visible_text.txt`,
/// `network.json`, `environment.json` and, when captured, `screenshot.png`.
/// It is passed as the last argument and removed afterwards.
#[derive(Debug, Clone)]
pub struct CommandDetector {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    scratch: PathBuf,
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

impl CommandDetector {
    pub fn new(command: &[String], timeout: Duration) -> Result<Self, String> {
        let (program, args) = command.split_first().ok_or("detector command is empty")?;
        Ok(Self {
            program: program.clone(),
            args: args.to_vec(),
            timeout,
            scratch: std::env::temp_dir(),
        })
    }

    pub fn with_scratch_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch = dir.into();
        self
    }

    fn write_inputs(dir: &Path, url: &str, fetch: &FetchResult) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("url.txt"), url)?;
        std::fs::write(dir.join("page.html"), &fetch.document)?;
        std::fs::write(dir.join("visible_text.txt"), &fetch.html.visible_text)?;
        std::fs::write(dir.join("network.json"), serde_json::to_vec_pretty(&fetch.network)?)?;
        std::fs::write(dir.join("environment.json"), serde_json::to_vec_pretty(&fetch.environment)?)?;
        if let Some(png) = &fetch.screenshot {
            std::fs::write(dir.join("screenshot.png"), png)?;
        }
        Ok(())
    }
}

/// Reads the first word of a detector's output.
pub fn parse_verdict_word(output: &str) -> Result<Verdict, String> {
    let word = output.split_whitespace().next().unwrap_or_default().to_ascii_lowercase();
    match word.trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '_') {
        "phishing" | "phish" | "malicious" => Ok(Verdict::Phishing),
        "non-phishing" | "non_phishing" | "nonphishing" | "benign" | "legitimate" | "clean" => Ok(Verdict::NonPhishing),
        _ => Err(format!("unrecognized detector output {:?}", output.trim())),
    }
}

#[async_trait]
impl Detector for CommandDetector {
    async fn judge(&self, url: &str, fetch: &FetchResult) -> Result<Verdict, String> {
        let n = RUN_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = self.scratch.join(format!("parrot-detect-{}-{n}", std::process::id()));
        Self::write_inputs(&dir, url, fetch).map_err(|e| format!("writing detector inputs: {e}"))?;
        let run = tokio::process::Command::new(&self.program)
            .args(&self.args)
            .arg(&dir)
            .kill_on_drop(true)
            .output();
        let result = match tokio::time::timeout(self.timeout, run).await {
            Err(_) => Err(format!("detector timed out after {:?}", self.timeout)),
            Ok(Err(e)) => Err(format!("running {}: {e}", self.program)),
            Ok(Ok(out)) if !out.status.success() => Err(format!(
                "detector exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )),
            Ok(Ok(out)) => parse_verdict_word(&String::from_utf8_lossy(&out.stdout)),
        };
        let _ = std::fs::remove_dir_all(&dir);
        result
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// `marker` or `command`.
    pub kind: String,
    pub markers: Vec<String>,
    pub command: Vec<String>,
    pub timeout_secs: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: "marker".into(),
            markers: vec![MARKER_PREFIX.to_string()],
            command: Vec::new(),
            timeout_secs: 120.0,
        }
    }
}

impl DetectorConfig {
    pub fn build(&self) -> Result<std::sync::Arc<dyn Detector>, String> {
        match self.kind.as_str() {
            "marker" if self.markers.is_empty() => Err("marker detector needs at least one token".into()),
            "marker" => Ok(std::sync::Arc::new(MarkerDetector::new(self.markers.clone()))),
            "command" => {
                if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
                    return Err(format!("detector timeout must be positive, got {}", self.timeout_secs));
                }
                Ok(std::sync::Arc::new(CommandDetector::new(
                    &self.command,
                    Duration::from_secs_f64(self.timeout_secs),
                )?))
            }
            other => Err(format!("unknown detector kind {other:?}")),
        }
    }
}
