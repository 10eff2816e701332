//! Image-text consistency scorers: deterministic mocks and an HTTP client
//! for a remote vision-language model.

use std::collections::HashMap;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScorerError {
    #[error("scorer transport failure: {0}")]
    Transport(String),
    #[error("scorer misconfigured: {0}")]
    Config(String),
}

/// What a scorer sees for one sample.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub sample_id: &'a str,
    /// Encoded image file bytes (PNG).
    pub image: &'a [u8],
    pub query: &'a str,
}

/// `C(image, query)`: returns the model's raw text reply.
pub trait Scorer: Send + Sync {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<String, ScorerError>;
}

/// Deterministic stand-ins for a real scorer.
#[derive(Debug, Clone, PartialEq)]
pub enum MockScorer {
    /// Always the same reply.
    Fixed(String),
    /// Replies keyed by sample id; unknown ids get `default`.
    Scripted {
        replies: HashMap<String, String>,
        default: String,
    },
    /// A score uniform on `[low, high]`, derived from a hash of the image
    /// bytes, the query and `seed`, printed with four decimals.
    Hashed { seed: u64, low: f64, high: f64 },
}

impl MockScorer {
    pub fn fixed(score: f64) -> Self {
        MockScorer::Fixed(format!("{score}"))
    }

    /// The score [`MockScorer::Hashed`] would report, before formatting.
    pub fn hashed_value(seed: u64, low: f64, high: f64, image: &[u8], query: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update((image.len() as u64).to_le_bytes());
        h.update(image);
        h.update(query.as_bytes());
        let digest = h.finalize();
        let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
        low + (high - low) * unit
    }
}

impl Scorer for MockScorer {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<String, ScorerError> {
        Ok(match self {
            MockScorer::Fixed(reply) => reply.clone(),
            MockScorer::Scripted { replies, default } => replies
                .get(request.sample_id)
                .cloned()
                .unwrap_or_else(|| default.clone()),
            MockScorer::Hashed { seed, low, high } => {
                let v = Self::hashed_value(*seed, *low, *high, request.image, request.query);
                format!("{v:.4}")
            }
        })
    }
}

/// JSON body sent to a remote scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    /// Base64 (standard alphabet, padded) of the image file bytes.
    pub image: String,
    pub query: String,
}

impl RemoteRequest {
    pub fn new(image: &[u8], query: &str) -> Self {
        Self {
            image: base64::engine::general_purpose::STANDARD.encode(image),
            query: query.to_string(),
        }
    }
}

/// HTTP client: `POST {endpoint}` with a [`RemoteRequest`] JSON body; the
/// response body is the model's free-text reply.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ScorerError> {
        let endpoint = endpoint.into();
        if endpoint.is_empty() {
            return Err(ScorerError::Config("empty scorer endpoint".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScorerError::Config(e.to_string()))?;
        Ok(Self { endpoint, client })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<String, ScorerError> {
        let body = serde_json::to_string(&RemoteRequest::new(request.image, request.query))
            .expect("request serializes");
        let resp = self
            .client
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .body(body)
            .send()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ScorerError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ScorerError::Transport(format!("HTTP {status}: {text}")));
        }
        Ok(text)
    }
}
