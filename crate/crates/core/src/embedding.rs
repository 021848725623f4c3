//! Tri-modal text embeddings behind a provider interface.
//!
//! Every [`HybridEmbedding`] carries a unit-norm dense vector, a sparse
//! term-weight map and one unit-norm vector per token for late interaction.
//! [`LocalProvider`] is fully deterministic and model-free: it sums seeded
//! hash projections of character 2- and 3-grams, so texts that share n-grams
//! land close together. [`RemoteProvider`] talks to an embedding server.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::hashing::{fnv1a, fnv1a_extend, splitmix64, unit_signed};
use crate::remote::JsonClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridEmbedding {
    pub dense: Vec<f64>,
    pub sparse: BTreeMap<String, f64>,
    pub multi: Vec<Vec<f64>>,
}

impl HybridEmbedding {
    /// Embedding of text with no tokens: the first basis vector, nothing else.
    pub fn empty(dense_dim: usize) -> Self {
        let mut dense = vec![0.0; dense_dim];
        if let Some(first) = dense.first_mut() {
            *first = 1.0;
        }
        HybridEmbedding {
            dense,
            sparse: BTreeMap::new(),
            multi: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    DeterministicLocal,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dense_dim: usize,
    pub multi_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub seed: u64,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            kind: ProviderKind::DeterministicLocal,
            dense_dim: 64,
            multi_dim: 64,
            endpoint: None,
            seed: 0,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn local(seed: u64) -> Self {
        EmbeddingProviderConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dense_dim == 0 || self.multi_dim == 0 {
            return Err(Error::InvalidConfig("embedding.dense_dim and embedding.multi_dim must be > 0".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint.as_deref().map_or(true, str::is_empty) {
            return Err(Error::InvalidConfig("embedding.endpoint is required for a remote provider".into()));
        }
        Ok(())
    }
}

pub trait EmbeddingProvider: Send + Sync + Debug {
    fn config(&self) -> &EmbeddingProviderConfig;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<HybridEmbedding>>;

    fn embed(&self, text: &str) -> Result<HybridEmbedding> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| Error::RemoteMalformed("provider returned no embedding".into()))
    }
}

/// Builds the provider described by `cfg`.
pub fn provider_from_config(cfg: &EmbeddingProviderConfig) -> Result<Arc<dyn EmbeddingProvider>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::DeterministicLocal => Arc::new(LocalProvider::new(cfg.clone())?),
        ProviderKind::Remote => Arc::new(RemoteProvider::new(cfg.clone())?),
    })
}

/// One-shot embedding through the provider described by `cfg`.
pub fn embed(text: &str, cfg: &EmbeddingProviderConfig) -> Result<HybridEmbedding> {
    provider_from_config(cfg)?.embed(text)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Dot product of two vectors already known to be unit-norm and equal length.
#[inline]
pub(crate) fn unit_dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
}

/// Scales `v` to unit L2 norm; returns `false` (leaving `v` untouched) for a zero vector.
pub fn l2_normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// MaxSim late-interaction score: mean over `query` vectors of their best
/// cosine against `doc` vectors, clamped to `[0, 1]`. Empty input scores 0.
pub fn maxsim(query: &[Vec<f64>], doc: &[Vec<f64>]) -> f64 {
    if query.is_empty() || doc.is_empty() {
        return 0.0;
    }
    let total: f64 = query
        .iter()
        .map(|q| doc.iter().map(|d| unit_dot(q, d)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    (total / query.len() as f64).clamp(0.0, 1.0)
}

/// Deterministic, model-free provider.
#[derive(Debug, Clone)]
pub struct LocalProvider {
    cfg: EmbeddingProviderConfig,
    seed_salt: u64,
}

impl LocalProvider {
    pub fn new(cfg: EmbeddingProviderConfig) -> Result<Self> {
        cfg.validate()?;
        let seed_salt = splitmix64(cfg.seed ^ 0x4b52_414c);
        Ok(LocalProvider { cfg, seed_salt })
    }

    fn project_token(&self, token: &str, dim: usize, out: &mut [f64]) {
        let marked: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut buf = [0u8; 16];
        for n in [2usize, 3] {
            for gram in marked.windows(n) {
                let mut h = fnv1a(&(n as u64).to_le_bytes());
                for c in gram {
                    h = fnv1a_extend(h, c.encode_utf8(&mut buf).as_bytes());
                }
                let base = splitmix64(h ^ self.seed_salt);
                for (d, slot) in out.iter_mut().enumerate().take(dim) {
                    *slot += unit_signed(splitmix64(base.wrapping_add(d as u64)));
                }
            }
        }
    }

    fn embed_one(&self, text: &str) -> HybridEmbedding {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return HybridEmbedding::empty(self.cfg.dense_dim);
        }
        let shared = self.cfg.dense_dim == self.cfg.multi_dim;
        let mut dense = vec![0.0; self.cfg.dense_dim];
        let mut sparse = BTreeMap::new();
        let mut multi = Vec::with_capacity(tokens.len());
        for token in &tokens {
            *sparse.entry(token.clone()).or_insert(0.0) += 1.0;
            let mut token_vec = vec![0.0; self.cfg.multi_dim];
            self.project_token(token, self.cfg.multi_dim, &mut token_vec);
            if shared {
                dense.iter_mut().zip(&token_vec).for_each(|(d, t)| *d += t);
            } else {
                self.project_token(token, self.cfg.dense_dim, &mut dense);
            }
            if !l2_normalize(&mut token_vec) {
                token_vec[0] = 1.0;
            }
            multi.push(token_vec);
        }
        if !l2_normalize(&mut dense) {
            return HybridEmbedding::empty(self.cfg.dense_dim);
        }
        HybridEmbedding { dense, sparse, multi }
    }
}

impl EmbeddingProvider for LocalProvider {
    fn config(&self) -> &EmbeddingProviderConfig {
        &self.cfg
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<HybridEmbedding>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    embeddings: Vec<HybridEmbedding>,
}

/// Client for a remote embedding server.
///
/// Request: `{"texts": [..]}`. Response: `{"embeddings": [{"dense", "sparse", "multi"}, ..]}`.
/// Vectors are re-normalized on receipt.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    cfg: EmbeddingProviderConfig,
    client: JsonClient,
}

impl RemoteProvider {
    pub fn new(cfg: EmbeddingProviderConfig) -> Result<Self> {
        cfg.validate()?;
        let endpoint = cfg.endpoint.clone().unwrap_or_default();
        Ok(RemoteProvider {
            cfg,
            client: JsonClient::new(endpoint, Duration::from_secs(30)),
        })
    }

    fn sanitize(&self, mut e: HybridEmbedding) -> Result<HybridEmbedding> {
        let malformed = |m: String| Err(Error::RemoteMalformed(m));
        if e.dense.len() != self.cfg.dense_dim {
            return malformed(format!("dense dim {} != {}", e.dense.len(), self.cfg.dense_dim));
        }
        if !l2_normalize(&mut e.dense) {
            return malformed("zero or non-finite dense vector".into());
        }
        for v in &mut e.multi {
            if v.len() != self.cfg.multi_dim {
                return malformed(format!("multi dim {} != {}", v.len(), self.cfg.multi_dim));
            }
            if !l2_normalize(v) {
                return malformed("zero or non-finite multi vector".into());
            }
        }
        if e.sparse.values().any(|w| !w.is_finite() || *w < 0.0) {
            return malformed("negative or non-finite sparse weight".into());
        }
        Ok(e)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn config(&self) -> &EmbeddingProviderConfig {
        &self.cfg
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<HybridEmbedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self.client.post(&EmbedRequest { texts })?;
        if resp.embeddings.len() != texts.len() {
            return Err(Error::RemoteMalformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.embeddings.len()
            )));
        }
        resp.embeddings.into_iter().map(|e| self.sanitize(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn local() -> LocalProvider {
        LocalProvider::new(EmbeddingProviderConfig::local(7)).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let u = [1.0, 0.0];
        assert_eq!(cosine(&u, &u).unwrap(), 1.0);
        assert_eq!(cosine(&u, &[0.0, 1.0]).unwrap(), 0.0);
        let s = 0.5f64.sqrt();
        assert!((cosine(&u, &[s, s]).unwrap() - 0.7071).abs() < 1e-4);
        assert!(matches!(cosine(&u, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(cosine(&u, &[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn embedding_invariants() {
        let p = local();
        let e = p.embed("Meropenem 1g IV q8h for meropenem-sensitive isolates").unwrap();
        let norm: f64 = e.dense.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(e.multi.len(), 7);
        for v in &e.multi {
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(e.sparse["meropenem"], 1.0);
        assert!(e.sparse.values().all(|w| *w >= 0.0));
    }

    #[test]
    fn deterministic_and_self_similar() {
        let p = local();
        let a = p.embed("meropenem").unwrap();
        let b = local().embed("meropenem").unwrap();
        assert_eq!(a, b);
        assert!((cosine(&a.dense, &b.dense).unwrap() - 1.0).abs() < 1e-12);
        let other_seed = LocalProvider::new(EmbeddingProviderConfig::local(8)).unwrap();
        assert_ne!(a.dense, other_seed.embed("meropenem").unwrap().dense);
    }

    #[test]
    fn empty_text_is_basis_vector() {
        let e = local().embed(" ,. ").unwrap();
        assert_eq!(e.dense[0], 1.0);
        assert!(e.dense[1..].iter().all(|x| *x == 0.0));
        assert!(e.sparse.is_empty() && e.multi.is_empty());
    }

    #[test]
    fn shared_ngrams_raise_cosine() {
        // Letters split into two disjoint alphabets guarantee no shared n-grams.
        let p = local();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let word = |rng: &mut ChaCha8Rng, alphabet: &[u8]| -> String {
            (0..rng.gen_range(5..9))
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char)
                .collect()
        };
        let (left, right) = (b"abcdefghijklm", b"nopqrstuvwxyz");
        let mut disjoint = 0.0;
        let mut half = 0.0;
        for _ in 0..100 {
            let a: Vec<String> = (0..4).map(|_| word(&mut rng, left)).collect();
            let b: Vec<String> = (0..4).map(|_| word(&mut rng, right)).collect();
            let mut shared = a[..2].to_vec();
            shared.extend((0..2).map(|_| word(&mut rng, right)));
            let ea = p.embed(&a.join(" ")).unwrap();
            disjoint += cosine(&ea.dense, &p.embed(&b.join(" ")).unwrap().dense).unwrap();
            half += cosine(&ea.dense, &p.embed(&shared.join(" ")).unwrap().dense).unwrap();
        }
        assert!(half / 100.0 > disjoint / 100.0 + 0.2, "half {half} disjoint {disjoint}");
    }

    #[test]
    fn maxsim_is_order_free() {
        let p = local();
        let a = p.embed("cefazolin preoperative dose").unwrap();
        let b = p.embed("dose preoperative cefazolin").unwrap();
        assert!((maxsim(&a.multi, &b.multi) - 1.0).abs() < 1e-12);
        assert_eq!(maxsim(&a.multi, &[]), 0.0);
    }

    #[test]
    fn remote_requires_endpoint() {
        let cfg = EmbeddingProviderConfig {
            kind: ProviderKind::Remote,
            ..Default::default()
        };
        assert!(matches!(provider_from_config(&cfg), Err(Error::InvalidConfig(_))));
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric(u in prop::collection::vec(-5.0f64..5.0, 4), v in prop::collection::vec(-5.0f64..5.0, 4)) {
            prop_assume!(u.iter().any(|x| *x != 0.0) && v.iter().any(|x| *x != 0.0));
            let a = cosine(&u, &v).unwrap();
            prop_assert_eq!(a, cosine(&v, &u).unwrap());
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
