//! Retrieval benchmark harnesses: planted-needle accuracy and query latency.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Index, QueryCache, RetrievalQuery, SearchWeights};
use crate::corpus::{ChunkRecord, Timestamp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NeedleQuery {
    pub query: String,
    pub gold_chunk_id: String,
}

#[derive(Debug, Clone)]
pub struct NeedleSuite {
    pub chunks: Vec<ChunkRecord>,
    pub queries: Vec<NeedleQuery>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedleConfig {
    pub queries: usize,
    pub keywords_per_needle: usize,
    pub fillers_per_needle: usize,
    /// Fraction of queries that also get a short look-alike distractor.
    pub distractor_fraction: f64,
    pub seed: u64,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        NeedleConfig {
            queries: 200,
            keywords_per_needle: 3,
            fillers_per_needle: 20,
            distractor_fraction: 0.5,
            seed: 42,
        }
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const FILLERS: &[&str] = &[
    "patient", "should", "receive", "therapy", "review", "daily", "clinical", "guidance", "before", "after", "monitor",
    "renal", "function", "consider", "alternative", "regimen", "when", "indicated", "adult", "dosing", "course",
    "follow", "local", "policy", "culture", "results", "available", "adjust", "response", "severity",
];

fn pseudo_word(rng: &mut impl Rng) -> String {
    (0..3)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

/// A look-alike of `word`: same character n-grams except at the edges.
fn variant(word: &str, rng: &mut impl Rng) -> String {
    format!("{word}{}", VOWELS.choose(rng).unwrap())
}

/// Builds a planted-needle suite.
///
/// Every query is a set of pseudo-word keywords planted verbatim in one long
/// gold chunk padded with common filler words. Some queries also get a short
/// distractor made of near-miss variants of the same keywords, which looks
/// closer than the gold chunk to a purely dense view of the text.
pub fn planted_needles(cfg: &NeedleConfig) -> NeedleSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = std::collections::HashSet::new();
    let mut chunks = Vec::new();
    let mut queries = Vec::new();
    for q in 0..cfg.queries {
        let mut keywords = Vec::with_capacity(cfg.keywords_per_needle);
        while keywords.len() < cfg.keywords_per_needle {
            let w = pseudo_word(&mut rng);
            if used.insert(w.clone()) {
                keywords.push(w);
            }
        }
        let mut words: Vec<String> = (0..cfg.fillers_per_needle)
            .map(|_| FILLERS.choose(&mut rng).unwrap().to_string())
            .collect();
        for kw in &keywords {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, kw.clone());
        }
        let gold = format!("needle-{q}");
        chunks.push(ChunkRecord::from_text(gold.clone(), "needles", words.join(" ")));
        if rng.gen_bool(cfg.distractor_fraction.clamp(0.0, 1.0)) {
            let text: Vec<String> = keywords.iter().map(|k| variant(k, &mut rng)).collect();
            chunks.push(ChunkRecord::from_text(format!("distractor-{q}"), "distractors", text.join(" ")));
        }
        queries.push(NeedleQuery {
            query: keywords.join(" "),
            gold_chunk_id: gold,
        });
    }
    NeedleSuite { chunks, queries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopK {
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NihReport {
    pub queries: usize,
    pub dense_only: TopK,
    pub hybrid: TopK,
}

fn top_k_accuracy(index: &Index, queries: &[NeedleQuery], weights: SearchWeights) -> Result<TopK> {
    let mut hits = [0usize; 3];
    for nq in queries {
        let q = RetrievalQuery::new(nq.query.clone())
            .with_top_k(5)
            .with_weights(weights)
            .with_threshold(0.0);
        let ranked = index.search_hybrid(&q)?;
        if let Some(rank) = ranked.iter().position(|h| h.chunk_id == nq.gold_chunk_id) {
            for (slot, cutoff) in [1, 3, 5].iter().enumerate() {
                if rank < *cutoff {
                    hits[slot] += 1;
                }
            }
        }
    }
    let n = queries.len().max(1) as f64;
    Ok(TopK {
        top1: hits[0] as f64 / n,
        top3: hits[1] as f64 / n,
        top5: hits[2] as f64 / n,
    })
}

/// Top@1/3/5 of the gold chunk for dense-only and default hybrid weights.
pub fn bench_nih(index: &Index, queries: &[NeedleQuery]) -> Result<NihReport> {
    if queries.is_empty() {
        return Err(Error::Empty("needle queries"));
    }
    Ok(NihReport {
        queries: queries.len(),
        dense_only: top_k_accuracy(index, queries, SearchWeights::DENSE_ONLY)?,
        hybrid: top_k_accuracy(index, queries, SearchWeights::default())?,
    })
}

impl NihReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>7} {:>7} {:>7}\n", "mode", "Top@1", "Top@3", "Top@5");
        for (name, t) in [("dense-only", self.dense_only), ("hybrid", self.hybrid)] {
            let _ = writeln!(s, "{:<12} {:>6.1}% {:>6.1}% {:>6.1}%", name, t.top1 * 100.0, t.top3 * 100.0, t.top5 * 100.0);
        }
        s
    }

    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for (name, t) in [("dense-only", self.dense_only), ("hybrid", self.hybrid)] {
            let _ = writeln!(
                s,
                "nih mode={name} n={} top1={:.4} top3={:.4} top5={:.4}",
                self.queries, t.top1, t.top3, t.top5
            );
        }
        s
    }
}

/// Summary of one timing series, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples_ms: &[f64]) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::Empty("latency samples"));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        // Nearest-rank percentile.
        let p95 = s[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Ok(LatencyStats {
            n,
            mean_ms: s.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: p95,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    /// Search plus re-rank on every call, no cache.
    pub unoptimized: LatencyStats,
    /// Cached path on an empty cache (every call misses).
    pub cache_cold: LatencyStats,
    /// Cached path after warm-up (every call hits).
    pub cache_warm: LatencyStats,
}

fn time_ms(f: impl FnOnce() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Times each query one at a time through the uncached and cached paths.
pub fn bench_latency(index: &Index, queries: &[String]) -> Result<LatencyReport> {
    if queries.is_empty() {
        return Err(Error::Empty("latency queries"));
    }
    let now = Timestamp::now();
    let rq: Vec<RetrievalQuery> = queries.iter().map(|q| RetrievalQuery::new(q.clone())).collect();
    let mut unopt = Vec::with_capacity(rq.len());
    for q in &rq {
        unopt.push(time_ms(|| index.search_reranked(q, now).map(drop))?);
    }
    let cache = QueryCache::new(rq.len().max(super::DEFAULT_CACHE_CAPACITY));
    let mut cold = Vec::with_capacity(rq.len());
    for q in &rq {
        cold.push(time_ms(|| index.cached_search(q, &cache, now).map(drop))?);
    }
    let mut warm = Vec::with_capacity(rq.len());
    for q in &rq {
        warm.push(time_ms(|| index.cached_search(q, &cache, now).map(drop))?);
    }
    Ok(LatencyReport {
        unoptimized: LatencyStats::from_samples(&unopt)?,
        cache_cold: LatencyStats::from_samples(&cold)?,
        cache_warm: LatencyStats::from_samples(&warm)?,
    })
}

impl LatencyReport {
    fn rows(&self) -> [(&'static str, LatencyStats); 3] {
        [
            ("unoptimized", self.unoptimized),
            ("cache-cold", self.cache_cold),
            ("cache-warm", self.cache_warm),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>6} {:>10} {:>10} {:>10}\n", "path", "n", "mean ms", "median ms", "p95 ms");
        for (name, r) in self.rows() {
            let _ = writeln!(s, "{:<12} {:>6} {:>10.3} {:>10.3} {:>10.3}", name, r.n, r.mean_ms, r.median_ms, r.p95_ms);
        }
        s
    }

    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for (name, r) in self.rows() {
            let _ = writeln!(
                s,
                "latency path={name} n={} mean_ms={:.6} median_ms={:.6} p95_ms={:.6}",
                r.n, r.mean_ms, r.median_ms, r.p95_ms
            );
        }
        s
    }
}
