//! Text embeddings and the cosine kernel.
//!
//! [`HashEmbedder`] is the deterministic local embedder used by tests and mock
//! runs: lowercase, split on non-alphanumerics, hash every token and every
//! adjacent token bigram into one of `dim` buckets, count, L2-normalize.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("invalid embedding: {0}")]
    Invalid(String),
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length. An all-zero input maps to the basis
    /// vector e₀.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Invalid("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Invalid("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Self::basis(values.len(), 0));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self(values))
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Neg for &EmbeddingVector {
    type Output = EmbeddingVector;

    fn neg(self) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|v| -v).collect())
    }
}

/// Cosine similarity. Inputs are unit-norm, so this is the dot product,
/// clamped to [-1, 1] against rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Seed mixed into every token hash of the local embedder.
pub const HASH_EMBEDDER_SEED: u64 = 0x5EED_F1A7_0000_0001;
pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            seed: HASH_EMBEDDER_SEED,
        }
    }

    fn bucket(&self, parts: &[&str]) -> usize {
        // FNV-1a over the seed bytes then each part, separated by 0xff.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in self.seed.to_le_bytes() {
            feed(b);
        }
        for part in parts {
            for b in part.bytes() {
                feed(b);
            }
            feed(0xff);
        }
        (h % self.dim as u64) as usize
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let tokens = tokenize(text);
        let mut counts = vec![0.0; self.dim];
        for t in &tokens {
            counts[self.bucket(&[t])] += 1.0;
        }
        for pair in tokens.windows(2) {
            counts[self.bucket(&[&pair[0], &pair[1]])] += 1.0;
        }
        EmbeddingVector::normalized(counts)
    }
}

#[cfg(feature = "remote")]
pub use remote::{RemoteEmbedder, RemoteEmbedderConfig};

#[cfg(feature = "remote")]
mod remote {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{EmbedError, Embedder, EmbeddingVector};
    use crate::net::{self, InFlightLimit};

    pub const API_KEY_ENV: &str = "FINMEM_EMBED_API_KEY";

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct RemoteEmbedderConfig {
        pub endpoint: String,
        pub model: String,
        pub dim: usize,
        pub timeout_secs: u64,
        pub max_retries: u32,
        pub max_in_flight: usize,
    }

    impl Default for RemoteEmbedderConfig {
        fn default() -> Self {
            Self {
                endpoint: "https://api.openai.com/v1/embeddings".into(),
                model: "text-embedding-ada-002".into(),
                dim: 1536,
                timeout_secs: 30,
                max_retries: 3,
                max_in_flight: 4,
            }
        }
    }

    #[derive(Serialize)]
    pub(crate) struct EmbeddingRequest<'a> {
        pub input: &'a str,
        pub model: &'a str,
    }

    #[derive(Deserialize)]
    struct EmbeddingResponse {
        data: Vec<EmbeddingDatum>,
    }

    #[derive(Deserialize)]
    struct EmbeddingDatum {
        embedding: Vec<f64>,
    }

    pub struct RemoteEmbedder {
        config: RemoteEmbedderConfig,
        api_key: String,
        client: reqwest::blocking::Client,
        limit: InFlightLimit,
    }

    impl RemoteEmbedder {
        pub fn from_env(config: RemoteEmbedderConfig) -> Result<Self, EmbedError> {
            net::ensure_network_allowed().map_err(EmbedError::ProviderUnavailable)?;
            let api_key = std::env::var(API_KEY_ENV)
                .map_err(|_| EmbedError::ProviderUnavailable(format!("{API_KEY_ENV} not set")))?;
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(config.timeout_secs))
                .build()
                .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
            let limit = InFlightLimit::new(config.max_in_flight);
            Ok(Self {
                config,
                api_key,
                client,
                limit,
            })
        }

        fn call_once(&self, text: &str) -> Result<Vec<f64>, String> {
            net::ensure_network_allowed()?;
            let body = EmbeddingRequest {
                input: text,
                model: &self.config.model,
            };
            let resp = self
                .client
                .post(&self.config.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send()
                .map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("HTTP {}", resp.status()));
            }
            let parsed: EmbeddingResponse = resp.json().map_err(|e| e.to_string())?;
            parsed
                .data
                .into_iter()
                .next()
                .map(|d| d.embedding)
                .ok_or_else(|| "response carried no embedding".to_string())
        }
    }

    impl Embedder for RemoteEmbedder {
        fn dim(&self) -> usize {
            self.config.dim
        }

        fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
            let _permit = self.limit.acquire();
            let mut last = String::new();
            for attempt in 0..=self.config.max_retries {
                match self.call_once(text) {
                    Ok(values) => {
                        if values.len() != self.config.dim {
                            return Err(EmbedError::DimensionMismatch {
                                left: values.len(),
                                right: self.config.dim,
                            });
                        }
                        return EmbeddingVector::normalized(values);
                    }
                    Err(e) => {
                        log::warn!("embedding attempt {} failed: {e}", attempt + 1);
                        last = e;
                        std::thread::sleep(Duration::from_millis(200 << attempt.min(5)));
                    }
                }
            }
            Err(EmbedError::ProviderUnavailable(last))
        }
    }

}
