//! Title embeddings and in-context demonstration selection.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::RwLock;
use std::time::Duration;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::corpus::{Dataset, ProductOffer};
use crate::util::{scoped_rng, sha256_hex};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] BackendError),
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
}

impl DemoError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, DemoError::Embedding(e) if e.is_retryable())
    }
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DemoError> {
        if values.is_empty() {
            return Err(DemoError::InvalidArgument("embedding has dimension 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DemoError::InvalidArgument("embedding has non-finite entries".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = DemoError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DemoError> {
    if a.dimension() != b.dimension() {
        return Err(DemoError::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(DemoError::InvalidArgument("cosine of a zero vector".into()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// Embedders
// ---------------------------------------------------------------------------

pub trait EmbeddingBackend: Send + Sync {
    /// Stable identifier; part of the cache key.
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Offline feature-hashing embedder over lowercase word tokens and their
/// character trigrams. Output is unit-norm.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "hash embedder dimension must be positive");
        HashEmbedder { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(Self::DEFAULT_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingBackend for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-{}", self.dimension)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
        let mut v = vec![0.0f64; self.dimension];
        let mut add = |feature: &str, weight: f64| {
            let h = fnv1a(feature.as_bytes());
            let idx = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[idx] += sign * weight;
        };
        for token in &tokens {
            add(&format!("w:{token}"), 1.0);
            let chars: Vec<char> = format!("<{token}>").chars().collect();
            for gram in chars.windows(3) {
                add(&format!("g:{}", gram.iter().collect::<String>()), 0.5);
            }
        }
        if tokens.is_empty() {
            add(&format!("raw:{lower}"), 1.0);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            let idx = (fnv1a(lower.as_bytes()) % self.dimension as u64) as usize;
            v[idx] = 1.0;
            return Ok(v);
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

/// Embeddings over an HTTP `POST {base_url}/embeddings` endpoint taking
/// `{"input": ..., "model": ...}` and answering `{"data": [{"embedding": [...]}]}`.
pub struct RemoteEmbedder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(RemoteEmbedder {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            client,
        })
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = serde_json::json!({ "input": text, "model": self.model });
        let url = format!("{}/embeddings", self.base_url);
        let raw = crate::backends::http::post_json(&self.client, &url, self.api_key.as_deref(), &body)?;
        let embedding = raw
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| BackendError::Protocol {
                message: "missing data[0].embedding".into(),
                raw: raw.to_string(),
            })?;
        embedding
            .iter()
            .map(|x| {
                x.as_f64().ok_or_else(|| BackendError::Protocol {
                    message: "non-numeric embedding entry".into(),
                    raw: raw.to_string(),
                })
            })
            .collect()
    }
}

/// Embedder wrapper caching vectors by (embedder id, title hash).
pub struct CachedEmbedder {
    inner: Box<dyn EmbeddingBackend>,
    cache: RwLock<HashMap<String, EmbeddingVector>>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    vector: EmbeddingVector,
}

impl CachedEmbedder {
    pub fn new(inner: Box<dyn EmbeddingBackend>) -> Self {
        CachedEmbedder {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn embedder_id(&self) -> String {
        self.inner.id()
    }

    fn key(&self, title: &str) -> String {
        format!("{}:{}", self.inner.id(), sha256_hex(title.as_bytes()))
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    /// Loads a cache file written by [`CachedEmbedder::save`]; a missing file
    /// is an empty cache.
    pub fn load(&self, path: &Path) -> Result<usize, DemoError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => {
                return Err(DemoError::Cache {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
        };
        let mut cache = self.cache.write().expect("cache lock");
        let mut loaded = 0;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: CacheLine = serde_json::from_str(line).map_err(|e| DemoError::Cache {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })?;
            cache.insert(entry.key, entry.vector);
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Writes the cache as JSON lines sorted by key.
    pub fn save(&self, path: &Path) -> Result<(), DemoError> {
        let cache = self.cache.read().expect("cache lock");
        let mut keys: Vec<&String> = cache.keys().collect();
        keys.sort();
        let mut out = String::new();
        for key in keys {
            let line = CacheLine {
                key: key.clone(),
                vector: cache[key].clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("cache line serializes"));
            out.push('\n');
        }
        crate::util::write_atomic(path, out.as_bytes()).map_err(|e| DemoError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Deterministic embedding of a product title, served from the cache when possible.
pub fn embed_title(title: &str, embedder: &CachedEmbedder) -> Result<EmbeddingVector, DemoError> {
    if title.trim().is_empty() {
        return Err(DemoError::InvalidArgument("empty title".into()));
    }
    let key = embedder.key(title);
    if let Some(v) = embedder.cache.read().expect("cache lock").get(&key) {
        return Ok(v.clone());
    }
    let vector = EmbeddingVector::new(embedder.inner.embed(title)?)?;
    embedder
        .cache
        .write()
        .expect("cache lock")
        .entry(key)
        .or_insert_with(|| vector.clone());
    Ok(vector)
}

// ---------------------------------------------------------------------------
// Pools and selection
// ---------------------------------------------------------------------------

/// Candidate demonstrations of one category, in canonical (import) order.
#[derive(Debug, Clone)]
pub struct DemoPool {
    category: String,
    entries: Vec<(ProductOffer, EmbeddingVector)>,
}

impl DemoPool {
    pub fn new(category: impl Into<String>, entries: Vec<(ProductOffer, EmbeddingVector)>) -> Result<Self, DemoError> {
        let category = category.into();
        if let Some((o, _)) = entries.iter().find(|(o, _)| o.category != category) {
            return Err(DemoError::InvalidArgument(format!(
                "pool for `{category}` contains offer `{}` of category `{}`",
                o.offer_id, o.category
            )));
        }
        if let Some((first, rest)) = entries.split_first() {
            let dim = first.1.dimension();
            if rest.iter().any(|(_, v)| v.dimension() != dim) {
                return Err(DemoError::InvalidArgument("pool vectors differ in dimension".into()));
            }
        }
        Ok(DemoPool { category, entries })
    }

    /// Embeds every offer of `category` in `train`.
    pub fn build(train: &Dataset, category: &str, embedder: &CachedEmbedder) -> Result<Self, DemoError> {
        let entries = train
            .offers_in(category)
            .map(|o| embed_title(&o.title, embedder).map(|v| (o.clone(), v)))
            .collect::<Result<Vec<_>, _>>()?;
        DemoPool::new(category, entries)
    }

    /// Pool without embeddings; only `fixed` and `random` may select from it.
    pub fn unembedded(train: &Dataset, category: &str) -> Result<Self, DemoError> {
        let placeholder = EmbeddingVector::new(vec![1.0]).expect("unit vector");
        let entries = train.offers_in(category).map(|o| (o.clone(), placeholder.clone())).collect();
        DemoPool::new(category, entries)
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn entries(&self) -> &[(ProductOffer, EmbeddingVector)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorStrategy {
    Fixed,
    Random,
    #[serde(rename = "semsim")]
    SemanticSimilarity,
    Mmr,
    SemsimAvd,
}

impl SelectorStrategy {
    pub const ALL: [SelectorStrategy; 5] = [
        SelectorStrategy::Fixed,
        SelectorStrategy::Random,
        SelectorStrategy::SemanticSimilarity,
        SelectorStrategy::Mmr,
        SelectorStrategy::SemsimAvd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectorStrategy::Fixed => "fixed",
            SelectorStrategy::Random => "random",
            SelectorStrategy::SemanticSimilarity => "semsim",
            SelectorStrategy::Mmr => "mmr",
            SelectorStrategy::SemsimAvd => "semsim-avd",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        !matches!(self, SelectorStrategy::Fixed | SelectorStrategy::Random)
    }
}

impl fmt::Display for SelectorStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectorStrategy {
    type Err = DemoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectorStrategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| DemoError::InvalidArgument(format!("unknown selector `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub strategy: SelectorStrategy,
    pub k: usize,
    pub mmr_lambda: f64,
    pub seed: u64,
}

impl SelectorConfig {
    pub const DEFAULT_MMR_LAMBDA: f64 = 0.5;

    pub fn new(strategy: SelectorStrategy, k: usize, seed: u64) -> Self {
        SelectorConfig {
            strategy,
            k,
            mmr_lambda: Self::DEFAULT_MMR_LAMBDA,
            seed,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.mmr_lambda = lambda;
        self
    }
}

/// Picks up to `cfg.k` demonstrations for `query` from `pool`.
///
/// `query_vector` is required by the similarity-based strategies. Offers in
/// the pool with the query's id are never selected.
pub fn select_demonstrations(
    query: &ProductOffer,
    query_vector: Option<&EmbeddingVector>,
    pool: &DemoPool,
    cfg: &SelectorConfig,
) -> Result<Vec<ProductOffer>, DemoError> {
    Ok(select_indices(query, query_vector, pool, cfg)?
        .into_iter()
        .map(|i| pool.entries[i].0.clone())
        .collect())
}

/// Like [`select_demonstrations`] but returns positions in the pool.
pub fn select_indices(
    query: &ProductOffer,
    query_vector: Option<&EmbeddingVector>,
    pool: &DemoPool,
    cfg: &SelectorConfig,
) -> Result<Vec<usize>, DemoError> {
    if query.category != pool.category {
        return Err(DemoError::InvalidArgument(format!(
            "query category `{}` differs from pool category `{}`",
            query.category, pool.category
        )));
    }
    if !(0.0..=1.0).contains(&cfg.mmr_lambda) {
        return Err(DemoError::InvalidArgument(format!("mmr lambda {} outside [0, 1]", cfg.mmr_lambda)));
    }
    if cfg.k == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<usize> = (0..pool.entries.len())
        .filter(|&i| pool.entries[i].0.offer_id != query.offer_id)
        .collect();
    if candidates.is_empty() {
        log::warn!("no demonstrations available for `{}` in category `{}`", query.offer_id, pool.category);
        return Ok(Vec::new());
    }
    let k = cfg.k.min(candidates.len());

    let query_sims = || -> Result<Vec<f64>, DemoError> {
        let qv = query_vector.ok_or_else(|| {
            DemoError::InvalidArgument(format!("selector `{}` needs a query embedding", cfg.strategy))
        })?;
        candidates
            .iter()
            .map(|&i| cosine_similarity(qv, &pool.entries[i].1))
            .collect()
    };

    let picked: Vec<usize> = match cfg.strategy {
        SelectorStrategy::Fixed => (0..k).collect(),
        SelectorStrategy::Random => {
            let mut rng = scoped_rng(cfg.seed, &["random-demos", &pool.category, &query.offer_id]);
            sample(&mut rng, candidates.len(), k).into_vec()
        }
        SelectorStrategy::SemanticSimilarity => similarity_order(&query_sims()?).into_iter().take(k).collect(),
        SelectorStrategy::Mmr => {
            let sims = query_sims()?;
            let pairwise = candidates
                .iter()
                .map(|&i| {
                    candidates
                        .iter()
                        .map(|&j| cosine_similarity(&pool.entries[i].1, &pool.entries[j].1))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            mmr_order(&sims, &pairwise, k, cfg.mmr_lambda)
        }
        SelectorStrategy::SemsimAvd => {
            let order = similarity_order(&query_sims()?);
            let truths: Vec<&ProductOffer> = candidates.iter().map(|&i| &pool.entries[i].0).collect();
            avd_order(&order, &truths, k)
        }
    };
    Ok(picked.into_iter().map(|p| candidates[p]).collect())
}

/// Positions sorted by descending similarity; ties keep canonical order.
pub fn similarity_order(sims: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    order
}

/// Greedy maximal marginal relevance: repeatedly take the candidate
/// maximising `λ·sim(query, c) − (1−λ)·max_{s ∈ selected} sim(c, s)`.
/// The redundancy term is 0 while nothing is selected; ties go to the lowest
/// position.
pub fn mmr_order(query_sims: &[f64], pairwise: &[Vec<f64>], k: usize, lambda: f64) -> Vec<usize> {
    let n = query_sims.len();
    let mut selected: Vec<usize> = Vec::with_capacity(k.min(n));
    let mut redundancy = vec![f64::NEG_INFINITY; n];
    let mut taken = vec![false; n];
    while selected.len() < k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|&c| !taken[c]) {
            let penalty = if selected.is_empty() { 0.0 } else { redundancy[c] };
            let score = lambda * query_sims[c] - (1.0 - lambda) * penalty;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let (chosen, _) = best.expect("an untaken candidate exists");
        taken[chosen] = true;
        selected.push(chosen);
        for c in 0..n {
            redundancy[c] = redundancy[c].max(pairwise[c][chosen]);
        }
    }
    selected
}

/// Similarity-ordered scan that skips candidates whose (attribute, value)
/// pairs are all already covered by earlier picks, then backfills skipped
/// candidates in similarity order.
fn avd_order(order: &[usize], offers: &[&ProductOffer], k: usize) -> Vec<usize> {
    let mut covered: HashSet<(&str, &str)> = HashSet::new();
    let mut picked = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for &pos in order {
        if picked.len() == k {
            break;
        }
        let pairs: Vec<(&str, &str)> = offers[pos]
            .truth
            .iter()
            .map(|(a, v)| (a.as_str(), v.as_str()))
            .collect();
        if pairs.iter().all(|p| covered.contains(p)) {
            skipped.push(pos);
            continue;
        }
        covered.extend(pairs);
        picked.push(pos);
    }
    for pos in skipped {
        if picked.len() == k {
            break;
        }
        picked.push(pos);
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn offer(id: &str, pairs: &[(&str, &str)]) -> ProductOffer {
        let truth: BTreeMap<String, String> = pairs.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect();
        ProductOffer::new(id, "c", format!("title {id}"), truth).unwrap()
    }

    fn pool(vectors: &[&[f64]]) -> DemoPool {
        let entries = vectors
            .iter()
            .enumerate()
            .map(|(i, x)| (offer(&format!("p{i}"), &[("A", &format!("v{i}"))]), v(x)))
            .collect();
        DemoPool::new("c", entries).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 2.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])).is_err());
        assert!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn hash_embedder_contract() {
        let cache = CachedEmbedder::new(Box::new(HashEmbedder::new(64)));
        let a = embed_title("abc", &cache).unwrap();
        assert_eq!(a.dimension(), 64);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(cache.cached_len(), 1);
        assert_eq!(embed_title("abc", &cache).unwrap(), a);
        assert_eq!(cache.cached_len(), 1);
        let b = embed_title("Oral-B Pro 1000", &cache).unwrap();
        assert_ne!(a, b);
        assert!(embed_title("  ", &cache).is_err());
    }

    #[test]
    fn cache_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let cache = CachedEmbedder::new(Box::new(HashEmbedder::new(8)));
        let a = embed_title("red shoe", &cache).unwrap();
        cache.save(&path).unwrap();
        let fresh = CachedEmbedder::new(Box::new(HashEmbedder::new(8)));
        assert_eq!(fresh.load(&path).unwrap(), 1);
        assert_eq!(embed_title("red shoe", &fresh).unwrap(), a);
        // a different embedder id does not hit the entry
        let other = CachedEmbedder::new(Box::new(HashEmbedder::new(16)));
        other.load(&path).unwrap();
        assert_eq!(embed_title("red shoe", &other).unwrap().dimension(), 16);
    }

    #[test]
    fn k_zero_and_single_entry_pool() {
        let p = pool(&[&[1.0, 0.0]]);
        let q = offer("q", &[]);
        let qv = v(&[0.0, 1.0]);
        for strategy in SelectorStrategy::ALL {
            let none = select_indices(&q, Some(&qv), &p, &SelectorConfig::new(strategy, 0, 1)).unwrap();
            assert!(none.is_empty());
            let one = select_indices(&q, Some(&qv), &p, &SelectorConfig::new(strategy, 3, 1)).unwrap();
            assert_eq!(one, vec![0], "{strategy}");
        }
    }

    #[test]
    fn empty_pool_yields_empty_selection() {
        let p = DemoPool::new("c", vec![]).unwrap();
        let q = offer("q", &[]);
        let got = select_indices(&q, Some(&v(&[1.0])), &p, &SelectorConfig::new(SelectorStrategy::Mmr, 4, 1)).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn query_is_never_its_own_demo() {
        let entries = vec![
            (offer("q", &[]), v(&[1.0, 0.0])),
            (offer("x", &[]), v(&[0.0, 1.0])),
        ];
        let p = DemoPool::new("c", entries).unwrap();
        let q = offer("q", &[]);
        for strategy in SelectorStrategy::ALL {
            let got = select_demonstrations(&q, Some(&v(&[1.0, 0.0])), &p, &SelectorConfig::new(strategy, 2, 0)).unwrap();
            assert_eq!(got.len(), 1);
            assert_eq!(got[0].offer_id, "x");
        }
    }

    #[test]
    fn semsim_orders_by_cosine_with_stable_ties() {
        let p = pool(&[&[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0], &[2.0, 0.0]]);
        let q = offer("q", &[]);
        let cfg = SelectorConfig::new(SelectorStrategy::SemanticSimilarity, 3, 0);
        let got = select_indices(&q, Some(&v(&[1.0, 0.0])), &p, &cfg).unwrap();
        assert_eq!(got, vec![1, 3, 2]);
    }

    #[test]
    fn mmr_prefers_diverse_second_pick() {
        // sims to the query: 0.9965, 0.9972, 0.9162; c0 and c1 are near-duplicates
        let p = pool(&[&[1.0, 0.4, 0.0], &[1.0, 0.41, 0.0], &[1.0, 1.2, 0.0]]);
        let q = offer("q", &[]);
        let qv = v(&[1.0, 0.5, 0.0]);
        let cfg = SelectorConfig::new(SelectorStrategy::Mmr, 2, 0);
        let got = select_indices(&q, Some(&qv), &p, &cfg).unwrap();
        assert_eq!(got, vec![1, 2]);
        let semsim = select_indices(
            &q,
            Some(&qv),
            &p,
            &SelectorConfig::new(SelectorStrategy::SemanticSimilarity, 2, 0),
        )
        .unwrap();
        assert_eq!(semsim, vec![1, 0]);
    }

    #[test]
    fn avd_skips_redundant_candidate_until_backfill() {
        // Hand-traced: candidates 0 and 1 carry identical truth pairs, so 1 is
        // skipped in favour of 2 and only returns when backfilling for k = 3.
        let entries = vec![
            (offer("c0", &[("Brand", "X"), ("Color", "Red")]), v(&[1.0, 0.0])),
            (offer("c1", &[("Brand", "X"), ("Color", "Red")]), v(&[0.9, 0.1])),
            (offer("c2", &[("Brand", "Y")]), v(&[0.5, 0.5])),
        ];
        let p = DemoPool::new("c", entries).unwrap();
        let q = offer("q", &[]);
        let qv = v(&[1.0, 0.0]);
        let two = select_indices(&q, Some(&qv), &p, &SelectorConfig::new(SelectorStrategy::SemsimAvd, 2, 0)).unwrap();
        assert_eq!(two, vec![0, 2]);
        let three = select_indices(&q, Some(&qv), &p, &SelectorConfig::new(SelectorStrategy::SemsimAvd, 3, 0)).unwrap();
        assert_eq!(three, vec![0, 2, 1]);
    }

    #[test]
    fn fixed_is_query_independent_and_random_is_seeded() {
        let entries: Vec<_> = (0..100)
            .map(|i| (offer(&format!("p{i}"), &[]), v(&[1.0, i as f64])))
            .collect();
        let p = DemoPool::new("c", entries).unwrap();
        let (q1, q2) = (offer("q1", &[]), offer("q2", &[]));
        let fixed = SelectorConfig::new(SelectorStrategy::Fixed, 5, 0);
        assert_eq!(
            select_indices(&q1, None, &p, &fixed).unwrap(),
            select_indices(&q2, None, &p, &fixed).unwrap()
        );
        assert_eq!(select_indices(&q1, None, &p, &fixed).unwrap(), vec![0, 1, 2, 3, 4]);

        let r1 = select_indices(&q1, None, &p, &SelectorConfig::new(SelectorStrategy::Random, 10, 1)).unwrap();
        let r1_again = select_indices(&q1, None, &p, &SelectorConfig::new(SelectorStrategy::Random, 10, 1)).unwrap();
        let r2 = select_indices(&q1, None, &p, &SelectorConfig::new(SelectorStrategy::Random, 10, 2)).unwrap();
        assert_eq!(r1, r1_again);
        assert_ne!(r1, r2);
        assert_eq!(r1.iter().collect::<HashSet<_>>().len(), 10);
    }

    #[test]
    fn similarity_strategies_need_query_vector() {
        let p = pool(&[&[1.0]]);
        let q = offer("q", &[]);
        let err = select_indices(&q, None, &p, &SelectorConfig::new(SelectorStrategy::Mmr, 1, 0));
        assert!(err.is_err());
    }

    #[test]
    fn selector_names_round_trip() {
        for s in SelectorStrategy::ALL {
            assert_eq!(s.as_str().parse::<SelectorStrategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.as_str()));
        }
    }
}
