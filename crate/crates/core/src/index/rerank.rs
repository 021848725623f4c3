//! Hit-heat and recency re-ranking.

use serde::{Deserialize, Serialize};

use crate::corpus::Timestamp;
use crate::error::{Error, Result};

/// Thirty days, in seconds.
pub const DEFAULT_RECENCY_SCALE_SECS: f64 = 30.0 * 24.0 * 3600.0;

/// Mixing weights for the final rank score and the hit-heat update rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankWeights {
    /// Similarity weight.
    pub w_s: f64,
    /// Evidence-frequency (hit-heat) weight.
    pub w_p: f64,
    /// Temporal-recency weight.
    pub w_t: f64,
    /// Hit-heat update coefficient.
    pub beta_hit: f64,
    /// Time constant of the recency decay `exp(-Δt / scale)`, in seconds.
    pub recency_scale_secs: f64,
}

impl Default for RerankWeights {
    fn default() -> Self {
        RerankWeights {
            w_s: 0.7,
            w_p: 0.15,
            w_t: 0.15,
            beta_hit: 0.1,
            recency_scale_secs: DEFAULT_RECENCY_SCALE_SECS,
        }
    }
}

impl RerankWeights {
    pub fn similarity_only() -> Self {
        RerankWeights {
            w_s: 1.0,
            w_p: 0.0,
            w_t: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_s, self.w_p, self.w_t];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidConfig("rerank: w_s, w_p and w_t must be >= 0".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("rerank: w_s + w_p + w_t must equal 1".into()));
        }
        if !(self.beta_hit > 0.0 && self.beta_hit <= 1.0) {
            return Err(Error::InvalidConfig("rerank.beta_hit must lie in (0, 1]".into()));
        }
        if !(self.recency_scale_secs > 0.0) {
            return Err(Error::InvalidConfig("rerank.recency_scale_secs must be > 0".into()));
        }
        Ok(())
    }

    /// `w_s·r_s + w_p·r_p + w_t·r_t`.
    #[inline]
    pub fn rank_score(&self, r_s: f64, r_p: f64, r_t: f64) -> f64 {
        self.w_s * r_s + self.w_p * r_p + self.w_t * r_t
    }
}

/// A retrieved chunk with its component scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub chunk_id: String,
    pub text: String,
    /// Hybrid similarity in `[0, 1]`.
    pub r_s: f64,
    /// Hit-heat in `[0, 1]`.
    pub r_p: f64,
    /// Recency in `[0, 1]`; zero until re-ranked.
    pub r_t: f64,
    /// Final rank score; equals `r_s` until re-ranked.
    pub r_rank: f64,
    pub created_at: Timestamp,
}

/// Ordering used everywhere hits are ranked: score descending, then chunk id.
pub(crate) fn by_score_then_id(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> std::cmp::Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Assigns `r_rank` from the hits' current `r_s`, `r_p`, `r_t` and sorts.
pub fn apply_rerank(mut hits: Vec<ScoredHit>, w: &RerankWeights) -> Vec<ScoredHit> {
    for h in &mut hits {
        h.r_rank = w.rank_score(h.r_s, h.r_p, h.r_t);
    }
    hits.sort_by(|a, b| by_score_then_id(a.r_rank, &a.chunk_id, b.r_rank, &b.chunk_id));
    hits
}

/// Raw recency `exp(-Δt / scale)` for a chunk created at `created_at`.
pub fn recency(created_at: Timestamp, now: Timestamp, scale_secs: f64) -> f64 {
    (-(now.since(created_at) as f64) / scale_secs).exp()
}

/// Computes recency scores (min-max normalized over the hit set, raw when
/// all hits are equally old), then re-ranks.
pub fn rerank(mut hits: Vec<ScoredHit>, w: &RerankWeights, now: Timestamp) -> Vec<ScoredHit> {
    let raw: Vec<f64> = hits
        .iter()
        .map(|h| recency(h.created_at, now, w.recency_scale_secs))
        .collect();
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    for (h, r) in hits.iter_mut().zip(raw) {
        h.r_t = if hi - lo > 1e-12 { (r - lo) / (hi - lo) } else { r.clamp(0.0, 1.0) };
    }
    apply_rerank(hits, w)
}

/// Hit-heat after one retrieval: `clip(r_p + β·R_rank)` into `[0, 1]`.
pub fn updated_heat(heat: f64, r_rank: f64, beta_hit: f64) -> f64 {
    (heat + beta_hit * r_rank).clamp(0.0, 1.0)
}
