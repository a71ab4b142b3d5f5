//! Text embeddings.
//!
//! Two backends sit behind [`Embedder`]: [`LocalEmbedder`], a deterministic
//! feature-hashing embedder over unigrams and adjacent bigrams, and
//! [`RemoteEmbedder`], a client for any endpoint that speaks the OpenAI
//! `/embeddings` wire format. Every vector leaving this module has unit L2
//! norm; text with no tokens maps to the first basis vector.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub const LOCAL_DEFAULT_DIMS: usize = 256;
pub const REMOTE_DEFAULT_DIMS: usize = 1536;
pub const DEFAULT_MAX_CHARS: usize = 16_000;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding endpoint returned HTTP {status}")]
    Status { status: u16 },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("embedding failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<EmbedError> },
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport(_) | EmbedError::Status { .. } | EmbedError::Malformed(_))
    }

    /// HTTP status carried by this error or the last attempt behind it.
    pub fn status(&self) -> Option<u16> {
        match self {
            EmbedError::Status { status } => Some(*status),
            EmbedError::Exhausted { last, .. } => last.status(),
            _ => None,
        }
    }
}

/// A unit-norm vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values`. An all-zero (or non-finite) input becomes e₁.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "embedding vectors need at least one dimension");
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
            Self(values)
        } else {
            Self::basis(values.len(), 0)
        }
    }

    pub fn basis(dims: usize, axis: usize) -> Self {
        let mut values = vec![0.0; dims];
        values[axis] = 1.0;
        Self(values)
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dims() != b.dims() {
        return Err(EmbedError::DimensionMismatch(a.dims(), b.dims()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[async_trait]
pub trait Embedder: Send + Sync + fmt::Debug {
    fn dims(&self) -> usize;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for t in texts {
            out.push(self.embed(t).await?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub backend: Backend,
    /// Defaults to 256 (local) or 1536 (remote).
    pub dims: Option<usize>,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_chars: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Local,
            dims: None,
            endpoint: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_chars: DEFAULT_MAX_CHARS,
            retries: 2,
            backoff_ms: 500,
            max_in_flight: 8,
            timeout_secs: 30,
        }
    }
}

impl EmbedderConfig {
    pub fn local(dims: usize) -> Self {
        Self {
            dims: Some(dims),
            ..Self::default()
        }
    }

    pub fn effective_dims(&self) -> usize {
        self.dims.unwrap_or(match self.backend {
            Backend::Local => LOCAL_DEFAULT_DIMS,
            Backend::Remote => REMOTE_DEFAULT_DIMS,
        })
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.effective_dims() < 8 {
            return Err(EmbedError::Config(format!("dims must be >= 8, got {}", self.effective_dims())));
        }
        if self.max_chars == 0 {
            return Err(EmbedError::Config("max_chars must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.backend {
            Backend::Local => Arc::new(LocalEmbedder::with_max_chars(self.effective_dims(), self.max_chars)),
            Backend::Remote => Arc::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

/// Feature-hashing embedder. Tokens are maximal alphanumeric runs,
/// lowercased; each token and each adjacent pair adds one count to the
/// bucket `fnv1a64(feature) % dims`.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dims: usize,
    max_chars: usize,
    bigrams: bool,
}

impl LocalEmbedder {
    pub fn new(dims: usize) -> Self {
        Self::with_max_chars(dims, DEFAULT_MAX_CHARS)
    }

    pub fn with_max_chars(dims: usize, max_chars: usize) -> Self {
        assert!(dims > 0);
        Self {
            dims,
            max_chars,
            bigrams: true,
        }
    }

    /// Unigram-only variant, insensitive to token order.
    pub fn unigrams_only(dims: usize) -> Self {
        Self {
            bigrams: false,
            ..Self::new(dims)
        }
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let text = truncate(text, self.max_chars);
        let tokens = tokenize(text);
        let mut counts = vec![0.0; self.dims];
        for t in &tokens {
            counts[bucket(t.as_bytes(), self.dims)] += 1.0;
        }
        if self.bigrams {
            for pair in tokens.windows(2) {
                let feature = format!("{} {}", pair[0], pair[1]);
                counts[bucket(feature.as_bytes(), self.dims)] += 1.0;
            }
        }
        EmbeddingVector::normalized(counts)
    }
}

#[async_trait]
impl Embedder for LocalEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_text(text))
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn truncate(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

fn bucket(bytes: &[u8], dims: usize) -> usize {
    (fnv1a64(bytes) % dims as u64) as usize
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike std's
/// `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Client for an OpenAI-compatible `POST {endpoint}/embeddings`.
///
/// The API key is read from the configured environment variable on every
/// request and is never stored on the client.
pub struct RemoteEmbedder {
    cfg: EmbedderConfig,
    client: reqwest::Client,
    in_flight: Semaphore,
}

impl fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("endpoint", &self.cfg.endpoint)
            .field("model", &self.cfg.model)
            .field("api_key_env", &self.cfg.api_key_env)
            .field("dims", &self.cfg.effective_dims())
            .finish()
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        let permits = cfg.max_in_flight.max(1);
        Ok(Self {
            cfg,
            client,
            in_flight: Semaphore::new(permits),
        })
    }

    async fn attempt(&self, inputs: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let url = format!("{}/embeddings", self.cfg.endpoint.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&EmbeddingRequest {
            model: &self.cfg.model,
            input: inputs.to_vec(),
        });
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| EmbedError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Status { status: status.as_u16() });
        }
        let body: EmbeddingResponse = resp
            .json()
            .await
            .map_err(|e| EmbedError::Malformed(e.without_url().to_string()))?;
        if body.data.len() != inputs.len() {
            return Err(EmbedError::Malformed(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                body.data.len()
            )));
        }
        let dims = self.cfg.effective_dims();
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != dims {
                    Err(EmbedError::Malformed(format!("expected {dims} dims, got {}", d.embedding.len())))
                } else {
                    Ok(EmbeddingVector::normalized(d.embedding))
                }
            })
            .collect()
    }

    async fn embed_with_retries(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let inputs: Vec<&str> = texts.iter().map(|t| truncate(t, self.cfg.max_chars)).collect();
        let attempts = self.cfg.retries + 1;
        let mut last = None;
        for i in 0..attempts {
            if i > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (i - 1).min(16));
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
            match self.attempt(&inputs).await {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    tracing::warn!(attempt = i + 1, error = %e, "embedding request failed");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(EmbedError::Exhausted {
            attempts,
            last: Box::new(last.expect("at least one attempt ran")),
        })
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn dims(&self) -> usize {
        self.cfg.effective_dims()
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = self.embed_with_retries(&[text]).await?;
        Ok(v.pop().expect("one input yields one vector"))
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        self.embed_with_retries(&refs).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec())
    }

    #[test]
    fn empty_text_maps_to_first_basis_vector() {
        let e = LocalEmbedder::new(256).embed_text("");
        assert_eq!(e, EmbeddingVector::basis(256, 0));
        let e = LocalEmbedder::new(256).embed_text("  --- ");
        assert_eq!(e, EmbeddingVector::basis(256, 0));
    }

    #[test]
    fn local_embedding_is_deterministic_and_unit() {
        let emb = LocalEmbedder::new(256);
        let a = emb.embed_text("Sign in to your account");
        assert_eq!(a, emb.embed_text("Sign in to your account"));
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_basics() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine(&EmbeddingVector::basis(4, 0), &EmbeddingVector::basis(4, 1)).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - 0.7071).abs() < 1e-4);
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(EmbedError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let text = "日本語のテキスト";
        assert_eq!(truncate(text, 3), "日本語");
        assert_eq!(truncate(text, 100), text);
    }

    #[test]
    fn config_rejects_tiny_dims() {
        assert!(EmbedderConfig::local(4).validate().is_err());
        assert_eq!(EmbedderConfig::default().effective_dims(), 256);
        let remote = EmbedderConfig {
            backend: Backend::Remote,
            ..EmbedderConfig::default()
        };
        assert_eq!(remote.effective_dims(), 1536);
    }

    #[test]
    fn remote_debug_output_has_no_key() {
        let cfg = EmbedderConfig {
            backend: Backend::Remote,
            api_key_env: "PARROT_TEST_DEBUG_KEY".into(),
            ..EmbedderConfig::default()
        };
        std::env::set_var("PARROT_TEST_DEBUG_KEY", "sk-very-secret-value");
        let client = RemoteEmbedder::new(cfg).unwrap();
        let debug = format!("{client:?}");
        assert!(!debug.contains("sk-very-secret-value"));
        assert!(debug.contains("PARROT_TEST_DEBUG_KEY"));
    }
}
