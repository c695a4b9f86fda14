//! Semantic similarity: embedders, clamped cosine, and the offline
//! hash-TF fallback used when no embedding service is configured.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kr::KnowledgeContent;

/// Dimension of the fallback term-frequency embedding.
pub const FALLBACK_DIM: usize = 4096;
/// XORed into the FNV-1a offset basis so bucket assignment is versioned.
pub const FALLBACK_HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedder failed: {0}")]
    Embedder(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SimilarityError> {
        if values.is_empty() {
            return Err(SimilarityError::Embedder("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub tau_sim: f64,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        Self { tau_sim: 0.35 }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<(), String> {
        if (0.0..=1.0).contains(&self.tau_sim) {
            Ok(())
        } else {
            Err(format!("tau_sim {} not in [0,1]", self.tau_sim))
        }
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, SimilarityError>;
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn bucket(token: &str) -> usize {
    let mut h = FNV_OFFSET ^ FALLBACK_HASH_SEED;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    (h % FALLBACK_DIM as u64) as usize
}

pub fn embed_fallback(text: &str) -> EmbeddingVector {
    let mut values = vec![0.0; FALLBACK_DIM];
    for tok in tokenize(text) {
        values[bucket(&tok)] += 1.0;
    }
    EmbeddingVector { values }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashTfEmbedder;

impl Embedder for HashTfEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        Ok(embed_fallback(text))
    }
}

/// Clamped cosine: `max(0, a.b / (|a||b|))`, and 0 when either norm is 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

pub fn sim_texts(a: &str, b: &str, embedder: &dyn Embedder) -> Result<f64, SimilarityError> {
    cosine(&embedder.embed(a)?, &embedder.embed(b)?)
}

pub fn sim_content(
    a: &KnowledgeContent,
    b: &KnowledgeContent,
    embedder: &dyn Embedder,
) -> Result<f64, SimilarityError> {
    sim_texts(&a.text, &b.text, embedder)
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        (**self).embed(text)
    }
}

/// Memoizes another embedder by exact text.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// Remote embedder. POSTs `{"input": text, "model": model}` and accepts either
/// `{"embedding": [...]}` or the OpenAI shape `{"data": [{"embedding": [...]}]}`.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: Option<String>,
    token: Option<String>,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: Option<String>,
        token: Option<String>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, SimilarityError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| SimilarityError::Embedder(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            model,
            token,
            dim,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingReply {
    Plain { embedding: Vec<f64> },
    OpenAi { data: Vec<EmbeddingDatum> },
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        let mut body = serde_json::json!({ "input": text });
        if let Some(m) = &self.model {
            body["model"] = serde_json::Value::String(m.clone());
        }
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| SimilarityError::Embedder(e.to_string()))?;
        let reply: EmbeddingReply = resp
            .json()
            .map_err(|e| SimilarityError::Embedder(e.to_string()))?;
        let values = match reply {
            EmbeddingReply::Plain { embedding } => embedding,
            EmbeddingReply::OpenAi { mut data } if !data.is_empty() => {
                data.swap_remove(0).embedding
            }
            EmbeddingReply::OpenAi { .. } => {
                return Err(SimilarityError::Embedder("no embedding in reply".into()))
            }
        };
        if values.len() != self.dim {
            return Err(SimilarityError::DimensionMismatch(values.len(), self.dim));
        }
        EmbeddingVector::new(values)
    }
}
