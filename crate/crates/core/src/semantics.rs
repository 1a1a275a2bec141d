//! Semantic embeddings of interest summaries and the similarity kernels used
//! for neighbor retrieval.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::UserId;
use crate::error::{Error, Result};
use crate::hsu::InterestState;
use crate::scalar::{dot, l2_norm, lit, parse_scalar, Scalar};

pub const DEFAULT_HASH_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding<T> {
    pub user_id: UserId,
    pub vector: Vec<T>,
    pub norm: T,
    /// Set when the vector could not be normalised (all zeros).
    pub raw: bool,
}

impl<T: Scalar> SemanticEmbedding<T> {
    /// L2-normalises `vector`; a zero vector is stored as-is and flagged raw.
    pub fn normalized(user_id: UserId, mut vector: Vec<T>) -> Self {
        let n = l2_norm(&vector);
        if n > T::zero() {
            vector.iter_mut().for_each(|x| *x = *x / n);
            let norm = l2_norm(&vector);
            Self { user_id, vector, norm, raw: false }
        } else {
            Self { user_id, vector, norm: T::zero(), raw: true }
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Source of raw text embeddings.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

/// Bag-of-tokens embedder: lowercase alphanumeric tokens hashed into `dim`
/// buckets with seeded 64-bit FNV-1a, bucket weight = token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_HASH_DIM, seed: 0 }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

impl HashEmbedder {
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(self.seed, token.as_bytes()) % self.dim as u64) as usize
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            v[self.bucket(&token)] += 1.0;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    pub token_env: String,
    pub dim: usize,
    pub retries: usize,
    pub timeout_secs: u64,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

/// OpenAI-compatible `/embeddings` client.
///
/// Request: `{"model", "input"}`; response: `{"data": [{"embedding": [...]}]}`.
pub struct EndpointEmbedder {
    config: EndpointConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl EndpointEmbedder {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { config, token, client })
    }

    fn call(&self, text: &str) -> Result<Vec<f64>> {
        let mut req = self
            .client
            .post(&self.config.url)
            .json(&EmbeddingRequest { model: &self.config.model, input: text });
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Transport(format!("embedding endpoint returned {}", resp.status())));
        }
        let body: EmbeddingResponse =
            resp.json().map_err(|e| Error::Transport(format!("bad embedding response: {e}")))?;
        body.data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| Error::Transport("embedding response has no data".into()))
    }
}

impl TextEmbedder for EndpointEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut last = None;
        for _ in 0..=self.config.retries {
            match self.call(text) {
                Ok(v) if v.len() == self.config.dim => return Ok(v),
                Ok(v) => return Err(Error::Dimension { expected: self.config.dim, got: v.len() }),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport("no attempts made".into())))
    }
}

/// Embeds the `"; "`-joined interest list.
///
/// An empty summary is an error for endpoint embedders; callers using the
/// hash embedder get a zero vector flagged raw.
pub fn embed_summary<T: Scalar>(
    user_id: UserId,
    summary: &InterestState,
    embedder: &dyn TextEmbedder,
) -> Result<SemanticEmbedding<T>> {
    let raw = embedder.embed_text(&summary.summary_text())?;
    if raw.len() != embedder.dim() {
        return Err(Error::Dimension { expected: embedder.dim(), got: raw.len() });
    }
    Ok(SemanticEmbedding::normalized(user_id, raw.into_iter().map(lit).collect()))
}

fn check_dims<T>(u: &[T], v: &[T]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Dimension { expected: u.len(), got: v.len() });
    }
    Ok(())
}

fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    check_dims(u, v)?;
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == T::zero() || nv == T::zero() {
        return Err(Error::UndefinedSimilarity("cosine of a zero-norm vector".into()));
    }
    Ok(clamp_unit(dot(u, v) / (nu * nv)))
}

/// Pearson correlation: cosine of the mean-centred vectors.
pub fn pearson<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    check_dims(u, v)?;
    if u.len() < 2 {
        return Err(Error::UndefinedSimilarity("pearson needs at least two dimensions".into()));
    }
    let center = |x: &[T]| {
        let mean = x.iter().copied().sum::<T>() / T::from_usize(x.len()).unwrap();
        x.iter().map(|&a| a - mean).collect::<Vec<T>>()
    };
    let (cu, cv) = (center(u), center(v));
    cosine(&cu, &cv).map_err(|_| Error::UndefinedSimilarity("pearson of a constant vector".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    pub dim: usize,
    pub entries: BTreeMap<UserId, SemanticEmbedding<T>>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, e: SemanticEmbedding<T>) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: e.dim() });
        }
        self.entries.insert(e.user_id, e);
        Ok(())
    }

    pub fn get(&self, user: UserId) -> Option<&SemanticEmbedding<T>> {
        self.entries.get(&user)
    }

    pub fn vector(&self, user: UserId) -> Result<&[T]> {
        self.get(user).map(|e| e.vector.as_slice()).ok_or(Error::UserNotFound(user))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Header `dim d count M`, then `user_id v1 ... vd` per line.
    pub fn render(&self) -> String {
        let mut out = format!("dim {} count {}\n", self.dim, self.entries.len());
        for e in self.entries.values() {
            let _ = write!(out, "{}", e.user_id);
            for x in &e.vector {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(source, 1, "missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (dim, count) = match h.as_slice() {
            ["dim", d, "count", m] => (
                d.parse::<usize>().map_err(|_| Error::parse(source, 1, "bad dim"))?,
                m.parse::<usize>().map_err(|_| Error::parse(source, 1, "bad count"))?,
            ),
            _ => return Err(Error::parse(source, 1, "expected `dim d count M`")),
        };
        let mut store = Self::new(dim);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let user: UserId = parts
                .next()
                .and_then(|u| u.parse().ok())
                .ok_or_else(|| Error::parse(source, idx + 1, "bad user_id"))?;
            let vector = parts
                .map(|x| parse_scalar::<T>(x).ok_or_else(|| Error::parse(source, idx + 1, format!("bad float {x:?}"))))
                .collect::<Result<Vec<T>>>()?;
            if vector.len() != dim {
                return Err(Error::parse(source, idx + 1, format!("expected {dim} values, got {}", vector.len())));
            }
            let norm = l2_norm(&vector);
            let raw = norm == T::zero();
            store.entries.insert(user, SemanticEmbedding { user_id: user, vector, norm, raw });
        }
        if store.entries.len() != count {
            return Err(Error::parse(source, 1, format!("header count {count} but {} rows", store.entries.len())));
        }
        Ok(store)
    }
}
