use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::detector::DetectorConfig;
use super::ingest::DEFAULT_PARKING_PATTERNS;
use super::Mode;
use crate::advisor::LlmConfig;
use crate::crawler::{DomainConfig, FetchConfig};
use crate::embedding::EmbedderConfig;
use crate::retrieval::RetrievalParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Read { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogPaths {
    /// User-Agent table; the built-in table when absent.
    pub user_agents: Option<PathBuf>,
    /// Egress table; direct egress for every entry when absent.
    pub proxy_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StorePaths {
    pub records: PathBuf,
    pub vectors: PathBuf,
}

impl Default for StorePaths {
    fn default() -> Self {
        Self {
            records: PathBuf::from("store/records.jsonl"),
            vectors: PathBuf::from("store/vectors.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSettings {
    pub allowlist: Option<PathBuf>,
    pub parking_patterns: Vec<String>,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            allowlist: None,
            parking_patterns: DEFAULT_PARKING_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Everything a run needs, as read from a TOML file. API keys are never
/// part of it; the LLM and embedding sections name environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Seeds the TypicalUser entry draws.
    pub seed: u64,
    /// URLs in flight at once.
    pub concurrency: usize,
    /// Insert cloaking evidence into the store after multi-mode runs.
    pub feedback: bool,
    pub embedder: EmbedderConfig,
    pub llm: LlmConfig,
    pub retrieval: RetrievalParams,
    pub catalog: CatalogPaths,
    pub store: StorePaths,
    pub detector: DetectorConfig,
    pub fetch: FetchConfig,
    pub domain: DomainConfig,
    pub ingest: IngestSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Parrot,
            seed: 42,
            concurrency: 4,
            feedback: true,
            embedder: EmbedderConfig::default(),
            llm: LlmConfig::default(),
            retrieval: RetrievalParams::default(),
            catalog: CatalogPaths::default(),
            store: StorePaths::default(),
            detector: DetectorConfig::default(),
            fetch: FetchConfig::default(),
            domain: DomainConfig::default(),
            ingest: IngestSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store.records);
        fix(&mut self.store.vectors);
        for p in [
            &mut self.catalog.user_agents,
            &mut self.catalog.proxy_map,
            &mut self.domain.corpus_path,
            &mut self.ingest.allowlist,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        self.retrieval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.embedder.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fetch.timeouts.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !matches!(self.domain.source.as_str(), "live" | "none" | "corpus") {
            return Err(ConfigError::Invalid(format!("unknown domain source {:?}", self.domain.source)));
        }
        if self.domain.source == "corpus" && self.domain.corpus_path.is_none() {
            return Err(ConfigError::Invalid("domain source \"corpus\" needs corpus_path".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("parrot.toml");
        std::fs::write(
            &path,
            "mode = \"typical\"\nseed = 7\n[llm]\nbackend = \"mock\"\n[store]\nrecords = \"cases.jsonl\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!((cfg.mode, cfg.seed, cfg.llm.backend.as_str()), (Mode::TypicalUser, 7, "mock"));
        assert_eq!(cfg.store.records, dir.path().join("cases.jsonl"));
        assert_eq!(cfg.store.vectors, dir.path().join("store/vectors.jsonl"));
        assert_eq!(cfg.retrieval.threshold, 0.65);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("concurrency = 0").is_err());
        assert!(RunConfig::from_toml("[retrieval]\nlambda = 1.5").is_err());
        assert!(RunConfig::from_toml("[domain]\nsource = \"corpus\"").is_err());
        assert!(RunConfig::from_toml("mode = \"stealth\"").is_err());
    }
}
