//! Exact hybrid retrieval over chunk records.
//!
//! Each chunk is scored against a query with three components: dense
//! cosine, BM25 over the chunk's sparse term weights, and late-interaction
//! MaxSim over per-token vectors. Components are min-max normalized over the
//! whole index before being mixed, so the mix `r_s` lies in `[0, 1]`.
//! Results are then re-ranked with hit-heat and recency (see [`rerank`]).

pub mod bench;
mod cache;
mod rerank;
mod snapshot;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub use cache::{CacheStats, QueryCache, QueryKey, DEFAULT_CACHE_CAPACITY};
pub use rerank::{apply_rerank, recency, rerank, updated_heat, RerankWeights, ScoredHit, DEFAULT_RECENCY_SCALE_SECS};
pub use snapshot::{SnapshotHeader, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};

use crate::corpus::{tokenize, ChunkRecord, Timestamp};
use crate::embedding::{maxsim, unit_dot, EmbeddingProvider, HybridEmbedding};
use crate::error::{Error, Result};
use crate::lexical::{bm25, Bm25Params, IdfTable};

/// Mixing weights for the three similarity components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchWeights {
    pub dense: f64,
    pub sparse: f64,
    pub colbert: f64,
}

impl Default for SearchWeights {
    fn default() -> Self {
        SearchWeights {
            dense: 0.4,
            sparse: 0.2,
            colbert: 0.4,
        }
    }
}

impl SearchWeights {
    pub const DENSE_ONLY: SearchWeights = SearchWeights {
        dense: 1.0,
        sparse: 0.0,
        colbert: 0.0,
    };

    /// Scaled to sum to one. Non-positive totals fall back to dense only.
    pub fn normalized(&self) -> SearchWeights {
        let sum = self.dense + self.sparse + self.colbert;
        if !(sum > 0.0) {
            return Self::DENSE_ONLY;
        }
        SearchWeights {
            dense: self.dense / sum,
            sparse: self.sparse / sum,
            colbert: self.colbert / sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.dense, self.sparse, self.colbert];
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("retrieval weights must lie in [0, 1] with a positive sum".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalQuery {
    pub text: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub weights: SearchWeights,
    #[serde(default = "default_threshold")]
    pub filter_threshold: f64,
}

fn default_top_k() -> usize {
    3
}

fn default_threshold() -> f64 {
    0.3
}

impl RetrievalQuery {
    /// A query with the default settings: top 3, weights 0.4/0.2/0.4, threshold 0.3.
    pub fn new(text: impl Into<String>) -> Self {
        RetrievalQuery {
            text: text.into(),
            top_k: default_top_k(),
            weights: SearchWeights::default(),
            filter_threshold: default_threshold(),
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn with_weights(mut self, weights: SearchWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.filter_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Precondition("top_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.filter_threshold) {
            return Err(Error::Precondition("filter_threshold must lie in [0, 1]".into()));
        }
        self.weights.validate()
    }
}

/// Per-chunk raw component scores before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentScores {
    pub dense: f64,
    pub lexical: f64,
    pub colbert: f64,
}

#[derive(Debug, Clone)]
struct Entry {
    chunk: ChunkRecord,
    embedding: HybridEmbedding,
    tokens: Vec<String>,
}

#[derive(Debug, Default)]
struct Inner {
    entries: Vec<Entry>,
    by_id: HashMap<String, usize>,
    idf: IdfTable,
    total_len: f64,
    generation: u64,
}

impl Inner {
    fn avg_len(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.total_len / self.entries.len() as f64
        }
    }
}

/// Flat in-memory index. Readers share a lock; upserts and hit updates take
/// it exclusively.
#[derive(Debug)]
pub struct Index {
    provider: Arc<dyn EmbeddingProvider>,
    rerank: RerankWeights,
    bm25: Bm25Params,
    inner: RwLock<Inner>,
}

fn min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi - lo > 1e-12 {
        values.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

impl Index {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, rerank: RerankWeights) -> Result<Self> {
        rerank.validate()?;
        Ok(Index {
            provider,
            rerank,
            bm25: Bm25Params::default(),
            inner: RwLock::new(Inner::default()),
        })
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn rerank_weights(&self) -> &RerankWeights {
        &self.rerank
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bumped by every mutation that can change search results.
    pub fn generation(&self) -> u64 {
        self.inner.read().generation
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<ChunkRecord> {
        let inner = self.inner.read();
        inner.by_id.get(chunk_id).map(|&i| inner.entries[i].chunk.clone())
    }

    /// All chunks in insertion order.
    pub fn chunks(&self) -> Vec<ChunkRecord> {
        self.inner.read().entries.iter().map(|e| e.chunk.clone()).collect()
    }

    pub(crate) fn entries_snapshot(&self) -> Vec<(ChunkRecord, HybridEmbedding)> {
        self.inner
            .read()
            .entries
            .iter()
            .map(|e| (e.chunk.clone(), e.embedding.clone()))
            .collect()
    }

    /// Inserts or replaces chunks; returns how many were written.
    ///
    /// Embeddings are computed before the index is touched, so a provider
    /// failure leaves it unchanged. Replacing an existing id keeps its hit-heat.
    pub fn upsert(&self, chunks: Vec<ChunkRecord>) -> Result<usize> {
        if chunks.is_empty() {
            return Ok(0);
        }
        let mut seen = HashSet::new();
        for c in &chunks {
            if !seen.insert(c.chunk_id.as_str()) {
                return Err(Error::DuplicateId(c.chunk_id.clone()));
            }
            if !(0.0..=1.0).contains(&c.hit_heat) {
                return Err(Error::Precondition(format!("chunk `{}` hit_heat outside [0, 1]", c.chunk_id)));
            }
        }
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        let embeddings = self.provider.embed_batch(&texts)?;
        if embeddings.len() != chunks.len() {
            return Err(Error::RemoteMalformed("provider returned the wrong number of embeddings".into()));
        }
        let prepared: Vec<(ChunkRecord, HybridEmbedding)> = chunks.into_iter().zip(embeddings).collect();
        self.insert_prepared(prepared)
    }

    pub(crate) fn insert_prepared(&self, prepared: Vec<(ChunkRecord, HybridEmbedding)>) -> Result<usize> {
        let n = prepared.len();
        let mut inner = self.inner.write();
        for (mut chunk, embedding) in prepared {
            let tokens = tokenize(&chunk.text);
            match inner.by_id.get(&chunk.chunk_id).copied() {
                Some(i) => {
                    let old = std::mem::take(&mut inner.entries[i].tokens);
                    inner.idf.remove_doc(&old);
                    inner.total_len -= old.len() as f64;
                    chunk.hit_heat = inner.entries[i].chunk.hit_heat;
                    inner.idf.add_doc(&tokens);
                    inner.total_len += tokens.len() as f64;
                    inner.entries[i] = Entry { chunk, embedding, tokens };
                }
                None => {
                    inner.idf.add_doc(&tokens);
                    inner.total_len += tokens.len() as f64;
                    let i = inner.entries.len();
                    inner.by_id.insert(chunk.chunk_id.clone(), i);
                    inner.entries.push(Entry { chunk, embedding, tokens });
                }
            }
        }
        inner.generation += 1;
        Ok(n)
    }

    /// Raw (unnormalized) component scores of every chunk, in insertion order.
    pub fn component_scores(&self, text: &str) -> Result<Vec<(String, ComponentScores)>> {
        let q = self.provider.embed(text)?;
        let q_tokens = tokenize(text);
        let inner = self.inner.read();
        if inner.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        Ok(self.score_all(&inner, &q, &q_tokens))
    }

    fn score_all(&self, inner: &Inner, q: &HybridEmbedding, q_tokens: &[String]) -> Vec<(String, ComponentScores)> {
        let avg = inner.avg_len();
        inner
            .entries
            .iter()
            .map(|e| {
                let scores = ComponentScores {
                    dense: unit_dot(&q.dense, &e.embedding.dense),
                    lexical: bm25(q_tokens, &e.embedding.sparse, e.tokens.len() as f64, avg, &inner.idf, self.bm25),
                    colbert: maxsim(&q.multi, &e.embedding.multi),
                };
                (e.chunk.chunk_id.clone(), scores)
            })
            .collect()
    }

    /// Top-`k` chunks by hybrid similarity, before re-ranking.
    ///
    /// Hits below the filter threshold are dropped. Returned hits carry
    /// `r_p` (current hit-heat), `r_t = 0` and `r_rank = r_s`.
    pub fn search_hybrid(&self, q: &RetrievalQuery) -> Result<Vec<ScoredHit>> {
        q.validate()?;
        let qe = self.provider.embed(&q.text)?;
        let q_tokens = tokenize(&q.text);
        let inner = self.inner.read();
        if inner.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let raw = self.score_all(&inner, &qe, &q_tokens);
        let mut dense: Vec<f64> = raw.iter().map(|(_, s)| s.dense).collect();
        let mut lexical: Vec<f64> = raw.iter().map(|(_, s)| s.lexical).collect();
        let mut colbert: Vec<f64> = raw.iter().map(|(_, s)| s.colbert).collect();
        min_max(&mut dense);
        min_max(&mut lexical);
        min_max(&mut colbert);
        let w = q.weights.normalized();

        let mut scored: Vec<(usize, f64)> = (0..raw.len())
            .map(|i| (i, w.dense * dense[i] + w.sparse * lexical[i] + w.colbert * colbert[i]))
            .filter(|&(_, r_s)| r_s >= q.filter_threshold)
            .collect();
        scored.sort_by(|a, b| {
            rerank::by_score_then_id(a.1, &inner.entries[a.0].chunk.chunk_id, b.1, &inner.entries[b.0].chunk.chunk_id)
        });
        scored.truncate(q.top_k);
        Ok(scored
            .into_iter()
            .map(|(i, r_s)| {
                let c = &inner.entries[i].chunk;
                ScoredHit {
                    chunk_id: c.chunk_id.clone(),
                    text: c.text.clone(),
                    r_s,
                    r_p: c.hit_heat,
                    r_t: 0.0,
                    r_rank: r_s,
                    created_at: c.created_at,
                }
            })
            .collect())
    }

    /// [`Index::search_hybrid`] followed by [`rerank`] with the index's weights.
    pub fn search_reranked(&self, q: &RetrievalQuery, now: Timestamp) -> Result<Vec<ScoredHit>> {
        Ok(rerank(self.search_hybrid(q)?, &self.rerank, now))
    }

    /// Adds `beta_hit · r_rank` to a chunk's hit-heat, clipped to `[0, 1]`.
    pub fn record_hit(&self, chunk_id: &str, r_rank: f64, beta_hit: f64) -> Result<f64> {
        if !(r_rank.is_finite() && r_rank >= 0.0) || !(beta_hit.is_finite() && beta_hit >= 0.0) {
            return Err(Error::Precondition("record_hit needs finite, non-negative r_rank and beta".into()));
        }
        let mut inner = self.inner.write();
        let i = *inner
            .by_id
            .get(chunk_id)
            .ok_or_else(|| Error::UnknownChunk(chunk_id.to_string()))?;
        let chunk = &mut inner.entries[i].chunk;
        chunk.hit_heat = updated_heat(chunk.hit_heat, r_rank, beta_hit);
        Ok(chunk.hit_heat)
    }

    /// Cache-fronted [`Index::search_reranked`]; the flag reports a cache hit.
    pub fn cached_search(&self, q: &RetrievalQuery, cache: &QueryCache, now: Timestamp) -> Result<(Vec<ScoredHit>, bool)> {
        let key = QueryKey::new(q);
        let generation = self.generation();
        if let Some(hits) = cache.get(&key, generation) {
            return Ok((hits, true));
        }
        let hits = self.search_reranked(q, now)?;
        cache.put(key, hits.clone(), generation);
        Ok((hits, false))
    }

    /// Cached search that also credits every returned hit's hit-heat.
    pub fn retrieve(&self, q: &RetrievalQuery, cache: &QueryCache, now: Timestamp) -> Result<Vec<ScoredHit>> {
        let (hits, _) = self.cached_search(q, cache, now)?;
        for h in &hits {
            self.record_hit(&h.chunk_id, h.r_rank, self.rerank.beta_hit)?;
        }
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingProviderConfig, LocalProvider};

    pub(crate) fn index() -> Index {
        let provider = Arc::new(LocalProvider::new(EmbeddingProviderConfig::local(1)).unwrap());
        Index::new(provider, RerankWeights::default()).unwrap()
    }

    fn chunk(id: &str, text: &str) -> ChunkRecord {
        ChunkRecord::from_text(id, "doc", text)
    }

    fn sample() -> Vec<ChunkRecord> {
        [
            "Cefazolin 1-2g IV within 60 minutes before incision for surgical prophylaxis.",
            "Vancomycin trough monitoring is recommended for MRSA bacteremia.",
            "Meropenem 1g IV q8h for hospital-acquired pneumonia with risk factors.",
            "Ceftriaxone 2g daily for bacterial meningitis in adults.",
            "Piperacillin-tazobactam 4.5g q6h for intra-abdominal infection.",
            "Levofloxacin 750mg daily for community-acquired pneumonia.",
            "Nitrofurantoin 100mg bid for uncomplicated cystitis.",
            "Linezolid 600mg q12h for VRE infections.",
            "Doxycycline 100mg bid for atypical pneumonia coverage.",
            "Ampicillin 2g q4h for listeria meningitis.",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| chunk(&format!("c{i}"), t))
        .collect()
    }

    #[test]
    fn upsert_and_self_retrieval() {
        let idx = index();
        assert!(matches!(idx.search_hybrid(&RetrievalQuery::new("x")), Err(Error::EmptyIndex)));
        assert_eq!(idx.upsert(sample()).unwrap(), 10);
        for c in sample() {
            let hits = idx.search_hybrid(&RetrievalQuery::new(c.text.clone())).unwrap();
            assert_eq!(hits[0].chunk_id, c.chunk_id);
        }
    }

    #[test]
    fn upsert_preserves_heat_and_invalidates() {
        let idx = index();
        idx.upsert(sample()).unwrap();
        idx.record_hit("c2", 1.0, 0.4).unwrap();
        let g = idx.generation();
        assert_eq!(idx.upsert(vec![]).unwrap(), 0);
        assert_eq!(idx.generation(), g);

        let mut replacement = chunk("c2", "Meropenem 2g IV q8h for meningitis.");
        replacement.hit_heat = 0.0;
        idx.upsert(vec![replacement]).unwrap();
        assert!(idx.generation() > g);
        let c = idx.chunk("c2").unwrap();
        assert_eq!(c.hit_heat, 0.4);
        assert!(c.text.contains("2g"));
        assert_eq!(idx.len(), 10);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let idx = index();
        let err = idx.upsert(vec![chunk("a", "x"), chunk("a", "y")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
        assert!(idx.is_empty());
    }

    #[test]
    fn dense_weights_match_dense_ordering() {
        let idx = index();
        idx.upsert(sample()).unwrap();
        let text = "pneumonia treatment dose";
        let q = RetrievalQuery::new(text)
            .with_weights(SearchWeights::DENSE_ONLY)
            .with_threshold(0.0)
            .with_top_k(10);
        let hybrid: Vec<String> = idx.search_hybrid(&q).unwrap().into_iter().map(|h| h.chunk_id).collect();
        let mut dense = idx.component_scores(text).unwrap();
        dense.sort_by(|a, b| rerank::by_score_then_id(a.1.dense, &a.0, b.1.dense, &b.0));
        let dense: Vec<String> = dense.into_iter().map(|(id, _)| id).collect();
        assert_eq!(hybrid, dense);
    }

    #[test]
    fn threshold_and_top_k() {
        let idx = index();
        idx.upsert(sample()).unwrap();
        let q = RetrievalQuery::new("meningitis").with_top_k(20).with_threshold(0.0);
        assert_eq!(idx.search_hybrid(&q).unwrap().len(), 10);
        let strict = RetrievalQuery::new("meningitis").with_top_k(20).with_threshold(0.9);
        let hits = idx.search_hybrid(&strict).unwrap();
        assert!(hits.len() < 10 && hits.iter().all(|h| h.r_s >= 0.9));
        assert!(idx.search_hybrid(&RetrievalQuery::new("x").with_top_k(0)).is_err());
    }

    #[test]
    fn record_hit_examples() {
        let idx = index();
        idx.upsert(sample()).unwrap();
        assert!(matches!(idx.record_hit("nope", 0.1, 0.1), Err(Error::UnknownChunk(_))));
        assert!((idx.record_hit("c0", 0.8, 0.25).unwrap() - 0.2).abs() < 1e-12);
        assert!((idx.record_hit("c0", 0.8, 0.25).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(idx.record_hit("c0", 10.0, 1.0).unwrap(), 1.0);
        assert!(idx.record_hit("c0", -0.5, 1.0).is_err());
        assert!(idx.record_hit("c0", f64::NAN, 1.0).is_err());
        assert_eq!(idx.record_hit("c1", 0.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn cached_search_roundtrip() {
        let idx = index();
        idx.upsert(sample()).unwrap();
        let cache = QueryCache::default();
        let q = RetrievalQuery::new("pneumonia");
        let (a, hit_a) = idx.cached_search(&q, &cache, Timestamp(0)).unwrap();
        let (b, hit_b) = idx.cached_search(&q, &cache, Timestamp(0)).unwrap();
        assert!(!hit_a && hit_b);
        assert_eq!(a, b);
        assert_eq!(a, idx.search_reranked(&q, Timestamp(0)).unwrap());

        idx.retrieve(&q, &cache, Timestamp(0)).unwrap();
        assert!(idx.chunk(&a[0].chunk_id).unwrap().hit_heat > 0.0);
        let (_, hit_c) = idx.cached_search(&q, &cache, Timestamp(0)).unwrap();
        assert!(hit_c, "hit-heat updates do not invalidate the cache");

        idx.upsert(vec![chunk("new", "pneumonia pneumonia")]).unwrap();
        let (_, hit_d) = idx.cached_search(&q, &cache, Timestamp(0)).unwrap();
        assert!(!hit_d);
    }
}
