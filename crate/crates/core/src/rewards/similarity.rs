//! Chunk-wise hybrid similarity between a prediction and a reference.

use serde::{Deserialize, Serialize};

use crate::embedding::{maxsim, unit_dot, HybridEmbedding};
use crate::error::{Error, Result};
use crate::lexical::{lexical_overlap, Bm25Params, IdfTable};

/// How texts are cut into comparison units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Chunking {
    #[default]
    Sentence,
    WholeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridSimilarityParams {
    /// Dense cosine weight.
    pub alpha: f64,
    /// Lexical weight.
    pub beta_lex: f64,
    /// Late-interaction weight.
    pub gamma: f64,
    pub chunking: Chunking,
    pub bm25: Bm25Params,
}

impl Default for HybridSimilarityParams {
    fn default() -> Self {
        HybridSimilarityParams {
            alpha: 0.4,
            beta_lex: 0.2,
            gamma: 0.4,
            chunking: Chunking::Sentence,
            bm25: Bm25Params::default(),
        }
    }
}

impl HybridSimilarityParams {
    pub fn weights(alpha: f64, beta_lex: f64, gamma: f64) -> Self {
        HybridSimilarityParams {
            alpha,
            beta_lex,
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta_lex, self.gamma];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidConfig("rewards.hybrid: alpha, beta_lex and gamma must be >= 0".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "rewards.hybrid: alpha + beta_lex + gamma must equal 1 (got {sum})"
            )));
        }
        Ok(())
    }
}

/// One embedded comparison unit.
#[derive(Debug, Clone)]
pub struct EmbeddedChunk {
    pub tokens: Vec<String>,
    pub embedding: HybridEmbedding,
}

/// The mixed per-pair score `α·S_d + β·S_l + γ·S_c`, with the dense cosine
/// clamped at zero so the mix stays in `[0, 1]`.
pub fn pair_score(p: &EmbeddedChunk, t: &EmbeddedChunk, idf: &IdfTable, params: &HybridSimilarityParams) -> f64 {
    let mut s = 0.0;
    if params.alpha > 0.0 {
        s += params.alpha * unit_dot(&p.embedding.dense, &t.embedding.dense).max(0.0);
    }
    if params.beta_lex > 0.0 {
        s += params.beta_lex * lexical_overlap(&p.tokens, &t.tokens, idf, params.bm25);
    }
    if params.gamma > 0.0 {
        s += params.gamma * maxsim(&p.embedding.multi, &t.embedding.multi);
    }
    s
}

/// `(1/|P|) Σ_i max_j pair_score(P_i, T_j)`, clamped to `[0, 1]`.
///
/// Lexical statistics come from the union of prediction and reference chunks.
pub fn hybrid_from_chunks(pred: &[EmbeddedChunk], reference: &[EmbeddedChunk], params: &HybridSimilarityParams) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let idf = IdfTable::from_docs(pred.iter().chain(reference).map(|c| &c.tokens));
    let total: f64 = pred
        .iter()
        .map(|p| {
            reference
                .iter()
                .map(|t| pair_score(p, t, &idf, params))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    (total / pred.len() as f64).clamp(0.0, 1.0)
}
