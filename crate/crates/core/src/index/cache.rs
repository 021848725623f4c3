//! Bounded LRU cache of ranked search results.

use std::collections::{BTreeMap, HashMap};

use parking_lot::Mutex;

use super::rerank::ScoredHit;
use super::RetrievalQuery;
use crate::corpus::tokenize;
use crate::hashing::fnv1a;

pub const DEFAULT_CACHE_CAPACITY: usize = 1000;

/// Identity of a query for caching: normalized text plus every knob that
/// changes the result.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryKey {
    text: String,
    top_k: usize,
    weights: [u64; 3],
    threshold: u64,
}

impl QueryKey {
    pub fn new(q: &RetrievalQuery) -> Self {
        let w = q.weights.normalized();
        QueryKey {
            text: tokenize(&q.text).join(" "),
            top_k: q.top_k,
            weights: [w.dense.to_bits(), w.sparse.to_bits(), w.colbert.to_bits()],
            threshold: q.filter_threshold.to_bits(),
        }
    }

    /// Stable 64-bit digest of the key.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = self.text.as_bytes().to_vec();
        bytes.extend((self.top_k as u64).to_le_bytes());
        for w in self.weights {
            bytes.extend(w.to_le_bytes());
        }
        bytes.extend(self.threshold.to_le_bytes());
        fnv1a(&bytes)
    }
}

#[derive(Debug, Default)]
struct LruState {
    entries: HashMap<QueryKey, (Vec<ScoredHit>, u64)>,
    order: BTreeMap<u64, QueryKey>,
    tick: u64,
    generation: u64,
    hits: u64,
    misses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub len: usize,
    pub hits: u64,
    pub misses: u64,
}

/// Thread-safe LRU cache; LRU bookkeeping is serialized by an internal lock.
///
/// Entries are tagged with the index generation they were computed against;
/// a lookup against a newer generation empties the cache.
#[derive(Debug)]
pub struct QueryCache {
    capacity: usize,
    state: Mutex<LruState>,
}

impl Default for QueryCache {
    fn default() -> Self {
        QueryCache::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl QueryCache {
    pub fn new(capacity: usize) -> Self {
        QueryCache {
            capacity: capacity.max(1),
            state: Mutex::new(LruState::default()),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.state.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        let s = self.state.lock();
        CacheStats {
            len: s.entries.len(),
            hits: s.hits,
            misses: s.misses,
        }
    }

    pub fn clear(&self) {
        let mut s = self.state.lock();
        s.entries.clear();
        s.order.clear();
    }

    pub fn contains(&self, key: &QueryKey) -> bool {
        self.state.lock().entries.contains_key(key)
    }

    fn sync_generation(s: &mut LruState, generation: u64) {
        if s.generation != generation {
            s.entries.clear();
            s.order.clear();
            s.generation = generation;
        }
    }

    /// Returns the cached hits and marks them most recently used.
    pub fn get(&self, key: &QueryKey, generation: u64) -> Option<Vec<ScoredHit>> {
        let mut s = self.state.lock();
        Self::sync_generation(&mut s, generation);
        s.tick += 1;
        let tick = s.tick;
        let found = match s.entries.get_mut(key) {
            Some((hits, last)) => {
                let old = std::mem::replace(last, tick);
                Some((hits.clone(), old))
            }
            None => None,
        };
        match found {
            Some((hits, old)) => {
                s.order.remove(&old);
                s.order.insert(tick, key.clone());
                s.hits += 1;
                Some(hits)
            }
            None => {
                s.misses += 1;
                None
            }
        }
    }

    /// Stores hits for `key`, evicting least-recently-used entries beyond capacity.
    pub fn put(&self, key: QueryKey, hits: Vec<ScoredHit>, generation: u64) {
        let mut s = self.state.lock();
        Self::sync_generation(&mut s, generation);
        s.tick += 1;
        let tick = s.tick;
        if let Some((_, old)) = s.entries.insert(key.clone(), (hits, tick)) {
            s.order.remove(&old);
        }
        s.order.insert(tick, key);
        while s.entries.len() > self.capacity {
            let Some((_, victim)) = s.order.pop_first() else { break };
            s.entries.remove(&victim);
        }
    }
}
