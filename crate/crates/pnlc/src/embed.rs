//! Text-to-vector embedding with two backends: a fully deterministic signed
//! feature-hashing embedder (tests, synthetic runs) and an OpenAI-compatible
//! remote embeddings endpoint (real runs), both behind a persistent
//! append-only cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::{API_BASE_VAR, API_KEY_VAR};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedder fingerprint {embedder:?} does not match cache fingerprint {cache:?}")]
    FingerprintMismatch { embedder: String, cache: String },
    #[error("remote embedding failed for input indices {indices:?}: {reason}")]
    RemoteFailed { indices: Vec<usize>, reason: String },
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("remote returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("non-finite embedding value for input index {0}")]
    NonFinite(usize),
    #[error("cache line {line} is corrupt: {reason}")]
    CorruptCache { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A fixed-dimension real vector plus the fingerprint of its producer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub fingerprint: String,
}

impl Embedding {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let n = self.l2_norm() * other.l2_norm();
        if n == 0.0 {
            0.0
        } else {
            dot / n
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Fingerprint string for the hash embedder at dimension `d`.
pub fn hash_fingerprint(d: usize) -> String {
    format!("hash-fnv1a-bigram-v1:d={d}")
}

/// Deterministic signed feature hashing.
///
/// Tokens are lowercased alphanumeric runs; features are unigrams plus
/// adjacent bigrams. Each feature is FNV-1a hashed to 64 bits; the bucket is
/// `hash mod d` and the sign comes from bit 63. The accumulated vector is
/// L2-normalized; an empty token set yields the zero vector.
pub fn hash_embed(text: &str, d: usize) -> Embedding {
    assert!(d >= 8 && d.is_power_of_two(), "d must be a power of two >= 8");
    let tokens = tokenize(text);
    let mut values = vec![0.0f64; d];
    let mut bump = |feature: &str| {
        let h = fnv1a(feature.as_bytes());
        let bucket = (h % d as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    };
    for t in &tokens {
        bump(t);
    }
    for pair in tokens.windows(2) {
        bump(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Embedding {
        values,
        fingerprint: hash_fingerprint(d),
    }
}

/// An embedding backend with an observable per-text fetch counter.
pub trait TextEmbedder: Send + Sync {
    fn fingerprint(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Compute or fetch embeddings for `texts` (no caching at this level).
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError>;
    /// Number of texts fetched/computed so far.
    fn fetches(&self) -> u64;
}

/// The hash embedder as a [`TextEmbedder`].
pub struct HashEmbedder {
    d: usize,
    fingerprint: String,
    fetches: AtomicU64,
}

impl HashEmbedder {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            fingerprint: hash_fingerprint(d),
            fetches: AtomicU64::new(0),
        }
    }
}

impl TextEmbedder for HashEmbedder {
    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        self.fetches.fetch_add(texts.len() as u64, Ordering::SeqCst);
        Ok(texts.iter().map(|t| hash_embed(t, self.d)).collect())
    }

    fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::SeqCst)
    }
}

/// Remote embedder speaking `POST {base}/embeddings`.
pub struct RemoteEmbedder {
    base: String,
    api_key: String,
    model: String,
    d: usize,
    normalize: bool,
    fingerprint: String,
    max_attempts: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
    fetches: AtomicU64,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn from_env(model: &str, d: usize) -> Result<Self, EmbedError> {
        let base = std::env::var(API_BASE_VAR).map_err(|_| EmbedError::MissingEnv(API_BASE_VAR))?;
        let key = std::env::var(API_KEY_VAR).map_err(|_| EmbedError::MissingEnv(API_KEY_VAR))?;
        Ok(Self::new(&base, &key, model, d))
    }

    pub fn new(base: &str, api_key: &str, model: &str, d: usize) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            model: model.to_string(),
            d,
            normalize: true,
            fingerprint: format!("remote:{model}:d={d}"),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            client: reqwest::blocking::Client::new(),
            fetches: AtomicU64::new(0),
        }
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn with_retry(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn fetch_once(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
        let body = json!({ "model": self.model, "input": texts });
        let resp = self
            .client
            .post(format!("{}/embeddings", self.base))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        let parsed: EmbeddingsResponse = resp.json().map_err(|e| e.to_string())?;
        Ok(parsed.data.into_iter().map(|r| r.embedding).collect())
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.fetches.fetch_add(texts.len() as u64, Ordering::SeqCst);
        let mut last = String::new();
        for attempt in 0..self.max_attempts {
            match self.fetch_once(texts) {
                Ok(rows) => {
                    if rows.len() != texts.len() {
                        return Err(EmbedError::CountMismatch {
                            expected: texts.len(),
                            got: rows.len(),
                        });
                    }
                    let mut out = Vec::with_capacity(rows.len());
                    for (i, mut values) in rows.into_iter().enumerate() {
                        if values.iter().any(|v| !v.is_finite()) {
                            return Err(EmbedError::NonFinite(i));
                        }
                        if self.normalize {
                            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                            if norm > 0.0 {
                                for v in &mut values {
                                    *v /= norm;
                                }
                            }
                        }
                        out.push(Embedding {
                            values,
                            fingerprint: self.fingerprint.clone(),
                        });
                    }
                    return Ok(out);
                }
                Err(reason) => last = reason,
            }
            if attempt + 1 < self.max_attempts {
                std::thread::sleep(self.backoff * 2u32.pow(attempt));
            }
        }
        Err(EmbedError::RemoteFailed {
            indices: (0..texts.len()).collect(),
            reason: last,
        })
    }

    fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::SeqCst)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    fingerprint: String,
    values: Vec<f64>,
}

/// Persistent embedding cache: one JSON record per line, append-only, so
/// interrupted runs resume. Keys are SHA-256 of the text; the whole file is
/// bound to a single embedder fingerprint.
pub struct EmbedCache {
    path: Option<PathBuf>,
    fingerprint: RwLock<Option<String>>,
    map: RwLock<HashMap<String, Vec<f64>>>,
    writer: Mutex<Option<File>>,
}

fn text_key(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

impl EmbedCache {
    /// Purely in-memory cache.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            fingerprint: RwLock::new(None),
            map: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Open (or create) a file-backed cache. A partially-written final line,
    /// left by an interrupted run, is ignored.
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let mut map = HashMap::new();
        let mut fingerprint: Option<String> = None;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
            let n = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        match &fingerprint {
                            None => fingerprint = Some(rec.fingerprint.clone()),
                            Some(fp) if *fp != rec.fingerprint => {
                                return Err(EmbedError::CorruptCache {
                                    line: i + 1,
                                    reason: "mixed fingerprints in cache file".into(),
                                })
                            }
                            _ => {}
                        }
                        map.insert(rec.key, rec.values);
                    }
                    Err(e) if i + 1 == n => {
                        // interrupted append: drop the trailing fragment
                        let _ = e;
                    }
                    Err(e) => {
                        return Err(EmbedError::CorruptCache {
                            line: i + 1,
                            reason: e.to_string(),
                        })
                    }
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            fingerprint: RwLock::new(fingerprint),
            map: RwLock::new(map),
            writer: Mutex::new(Some(writer)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_fingerprint(&self, embedder_fp: &str) -> Result<(), EmbedError> {
        let mut fp = self.fingerprint.write().unwrap();
        match fp.as_deref() {
            None => {
                *fp = Some(embedder_fp.to_string());
                Ok(())
            }
            Some(cached) if cached == embedder_fp => Ok(()),
            Some(cached) => Err(EmbedError::FingerprintMismatch {
                embedder: embedder_fp.to_string(),
                cache: cached.to_string(),
            }),
        }
    }

    fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.map.read().unwrap().get(key).cloned()
    }

    fn insert(&self, key: String, fingerprint: &str, values: Vec<f64>) -> Result<(), EmbedError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(w) = writer.as_mut() {
            let rec = CacheRecord {
                key: key.clone(),
                fingerprint: fingerprint.to_string(),
                values: values.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("cache record serializes"))?;
        }
        self.map.write().unwrap().insert(key, values);
        Ok(())
    }
}

/// Embed a batch of texts through the cache.
///
/// Cache hits are served without fetches; distinct misses are fetched exactly
/// once and appended to the cache. Output order matches input order.
pub fn embed_batch(
    texts: &[String],
    embedder: &dyn TextEmbedder,
    cache: &EmbedCache,
) -> Result<Vec<Embedding>, EmbedError> {
    cache.check_fingerprint(embedder.fingerprint())?;
    let keys: Vec<String> = texts.iter().map(|t| text_key(t)).collect();

    // distinct misses, in first-appearance order
    let mut miss_texts: Vec<String> = Vec::new();
    let mut miss_index: HashMap<&str, usize> = HashMap::new();
    for (text, key) in texts.iter().zip(&keys) {
        if cache.get(key).is_none() && !miss_index.contains_key(key.as_str()) {
            miss_index.insert(key.as_str(), miss_texts.len());
            miss_texts.push(text.clone());
        }
    }

    let fetched = embedder.embed_raw(&miss_texts)?;
    for (text, emb) in miss_texts.iter().zip(&fetched) {
        cache.insert(text_key(text), embedder.fingerprint(), emb.values.clone())?;
    }

    let fp = embedder.fingerprint().to_string();
    Ok(keys
        .iter()
        .map(|key| Embedding {
            values: cache.get(key).expect("inserted above"),
            fingerprint: fp.clone(),
        })
        .collect())
}
