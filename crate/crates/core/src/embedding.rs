//! Text embedders.
//!
//! [`LocalHashEmbedder`] is a deterministic feature-hashing embedder: every
//! token and adjacent-token bigram is hashed with seeded XXH3-64, the low bits
//! pick a bucket and the high bit picks a sign, and the accumulated vector is
//! L2-normalized. [`RemoteEmbedder`] calls an HTTP service that speaks
//! `{"input": text}` → `{"embedding": [..], "model_id": ".."}`.
//!
//! Every embedding leaves this module with unit norm, so similarity between
//! two embeddings is a plain dot product.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

/// Seed of the local feature hash. Changing it requires bumping
/// [`HASH_SEED_VERSION`].
pub const HASH_SEED: u64 = 0x005E_ED0F_C075_01D8;
pub const HASH_SEED_VERSION: u32 = 1;
pub const LOCAL_MODEL_ID: &str = "local-hash";
pub const DEFAULT_DIMENSION: usize = 256;
pub const MIN_DIMENSION: usize = 8;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "in", "is", "it", "of",
    "on", "or", "so", "that", "the", "this", "to", "was", "were", "with",
];

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text has no embeddable tokens")]
    NoFeatures,
    #[error("embedding dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding request timed out")]
    Timeout,
    #[error("embedding service returned HTTP {0}")]
    Status(u16),
    #[error("embedding service unreachable: {0}")]
    Transport(String),
    #[error("malformed embedding response: {0}")]
    Decode(String),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("invalid embedder configuration: {0}")]
    Config(String),
}

/// A unit-length vector tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl Embedding {
    /// Normalizes `values` to unit length.
    pub fn from_raw(mut values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroNorm);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Dot product; equals cosine similarity for unit vectors.
    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::for_model(&self.model_id, self.dimension())
    }
}

/// Identifies the embedding space a store was built in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub model_id: String,
    pub dimension: usize,
    /// Seed version of the local hash; 0 for remote models.
    pub hash_seed_version: u32,
}

impl Fingerprint {
    pub fn for_model(model_id: &str, dimension: usize) -> Self {
        let hash_seed_version = if model_id == LOCAL_MODEL_ID {
            HASH_SEED_VERSION
        } else {
            0
        };
        Self {
            model_id: model_id.to_string(),
            dimension,
            hash_seed_version,
        }
    }
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/d{}/seed-v{}",
            self.model_id, self.dimension, self.hash_seed_version
        )
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;

    /// The fingerprint of embeddings this embedder produces, when known
    /// before the first call.
    fn fingerprint(&self) -> Option<Fingerprint>;
}

/// Lowercased alphanumeric tokens with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

/// Unigram and bigram features of `text`, in order.
pub fn features(text: &str) -> Vec<String> {
    let tokens = tokenize(text);
    let bigrams = tokens.windows(2).map(|w| format!("{} {}", w[0], w[1]));
    tokens.iter().cloned().chain(bigrams).collect()
}

#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dimension: usize,
}

impl LocalHashEmbedder {
    pub fn new(dimension: usize) -> Result<Self, EmbedError> {
        if dimension < MIN_DIMENSION {
            return Err(EmbedError::Config(format!(
                "dimension {dimension} below minimum {MIN_DIMENSION}"
            )));
        }
        Ok(Self { dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

impl Default for LocalHashEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl Embedder for LocalHashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        embed_local(text, self.dimension)
    }

    fn fingerprint(&self) -> Option<Fingerprint> {
        Some(Fingerprint::for_model(LOCAL_MODEL_ID, self.dimension))
    }
}

pub fn embed_local(text: &str, dimension: usize) -> Result<Embedding, EmbedError> {
    if dimension < MIN_DIMENSION {
        return Err(EmbedError::Config(format!(
            "dimension {dimension} below minimum {MIN_DIMENSION}"
        )));
    }
    let features = features(text);
    if features.is_empty() {
        return Err(EmbedError::NoFeatures);
    }
    let mut values = vec![0.0; dimension];
    for feature in &features {
        let hash = xxh3_64_with_seed(feature.as_bytes(), HASH_SEED);
        let bucket = (hash % dimension as u64) as usize;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    }
    // Every bucket can cancel out (e.g. two colliding features of opposite sign).
    Embedding::from_raw(values, LOCAL_MODEL_ID).map_err(|_| EmbedError::NoFeatures)
}

/// Builds a unit vector whose dot product with `query` is exactly `relevance`
/// (up to rounding). `salt` picks the orthogonal component, so different
/// salts give different vectors with the same relevance.
///
/// Used to replay scenarios whose relevance values are given rather than
/// computed from text.
pub fn synthesize_with_relevance(
    query: &Embedding,
    relevance: f64,
    salt: u64,
) -> Result<Embedding, EmbedError> {
    let relevance = relevance.clamp(-1.0, 1.0);
    let dim = query.dimension();
    if dim < 2 {
        return Err(EmbedError::Config("need at least two dimensions".into()));
    }
    // Gram-Schmidt a pseudo-random direction against the query.
    let mut ortho: Vec<f64> = (0..dim)
        .map(|i| {
            let h = xxh3_64_with_seed(&(i as u64).to_le_bytes(), HASH_SEED ^ salt);
            (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let projection: f64 = ortho.iter().zip(&query.values).map(|(a, b)| a * b).sum();
    ortho
        .iter_mut()
        .zip(&query.values)
        .for_each(|(o, q)| *o -= projection * q);
    let norm = ortho.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return Err(EmbedError::ZeroNorm);
    }
    let perpendicular = (1.0 - relevance * relevance).max(0.0).sqrt();
    let values = query
        .values
        .iter()
        .zip(&ortho)
        .map(|(q, o)| relevance * q + perpendicular * o / norm)
        .collect();
    Embedding::from_raw(values, query.model_id.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    #[default]
    LocalHash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::LocalHash,
            dimension: DEFAULT_DIMENSION,
            endpoint: None,
            auth_token_env: None,
            timeout_ms: 10_000,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dimension == 0 {
            return Err(EmbedError::Config("dimension must be positive".into()));
        }
        if self.kind == EmbedderKind::LocalHash && self.dimension < MIN_DIMENSION {
            return Err(EmbedError::Config(format!(
                "dimension {} below minimum {MIN_DIMENSION}",
                self.dimension
            )));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint.is_none() {
            return Err(EmbedError::Config(
                "remote embedder requires an endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::LocalHash => Box::new(LocalHashEmbedder::new(self.dimension)?),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
    #[serde(default, alias = "model")]
    model_id: Option<String>,
}

pub struct RemoteEmbedder {
    config: EmbedderConfig,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Ok(Self { config, agent })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        embed_remote(&self.agent, text, &self.config)
    }

    fn fingerprint(&self) -> Option<Fingerprint> {
        None
    }
}

pub(crate) fn map_ureq_error(err: ureq::Error) -> (bool, Option<u16>, String) {
    match err {
        ureq::Error::Timeout(_) => (true, None, "timeout".into()),
        ureq::Error::StatusCode(code) => (false, Some(code), format!("HTTP {code}")),
        ureq::Error::Io(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) =>
        {
            (true, None, e.to_string())
        }
        other => (false, None, other.to_string()),
    }
}

pub(crate) fn bearer_token(env_var: Option<&str>) -> Option<String> {
    env_var.and_then(|name| std::env::var(name).ok())
}

fn embed_remote(
    agent: &ureq::Agent,
    text: &str,
    config: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let endpoint = config
        .endpoint
        .as_deref()
        .ok_or_else(|| EmbedError::Config("remote embedder requires an endpoint".into()))?;
    let mut request = agent.post(endpoint);
    if let Some(token) = bearer_token(config.auth_token_env.as_deref()) {
        request = request.header("Authorization", &format!("Bearer {token}"));
    }
    let mut response = request
        .send_json(EmbedRequest { input: text })
        .map_err(|e| match map_ureq_error(e) {
            (true, _, _) => EmbedError::Timeout,
            (_, Some(code), _) => EmbedError::Status(code),
            (_, None, msg) => EmbedError::Transport(msg),
        })?;
    let body: EmbedResponse =
        response
            .body_mut()
            .read_json()
            .map_err(|e| match map_ureq_error(e) {
                (true, _, _) => EmbedError::Timeout,
                (_, _, msg) => EmbedError::Decode(msg),
            })?;
    if body.embedding.len() != config.dimension {
        return Err(EmbedError::DimensionMismatch {
            expected: config.dimension,
            got: body.embedding.len(),
        });
    }
    Embedding::from_raw(
        body.embedding,
        body.model_id.unwrap_or_else(|| "remote".into()),
    )
}
