//! Penalty for semantically duplicated consecutive sentences.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::pos::{PosClass, PosTagger};
use crate::corpus::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepetitionConfig {
    pub lambda: f64,
    pub tau: f64,
    pub pos_weights: BTreeMap<PosClass, f64>,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        RepetitionConfig {
            lambda: 0.1,
            tau: 0.92,
            pos_weights: BTreeMap::from([
                (PosClass::Function, 0.3),
                (PosClass::Content, 1.0),
                (PosClass::Therapeutic, 0.0),
            ]),
        }
    }
}

impl RepetitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("rewards.repetition.lambda must be >= 0".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("rewards.repetition.tau must lie in (0, 1]".into()));
        }
        if self.pos_weights.values().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidConfig("rewards.repetition.pos_weights must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn weight(&self, class: PosClass) -> f64 {
        self.pos_weights.get(&class).copied().unwrap_or(match class {
            PosClass::Content => 1.0,
            _ => 0.0,
        })
    }
}

/// Word-class weight of sentence `current` when it repeats `previous`.
///
/// The repeated material is the set of tokens the two sentences share; when
/// they share none (a paraphrase) the whole current sentence counts. The
/// heaviest class present decides, so a repeat carrying any content word is
/// penalised in full while shared dose/schedule terms alone are not.
pub fn repeat_weight(current: &str, previous: &str, cfg: &RepetitionConfig, tagger: &dyn PosTagger) -> f64 {
    let cur: BTreeSet<String> = tokenize(current).into_iter().collect();
    let prev: BTreeSet<String> = tokenize(previous).into_iter().collect();
    let shared: Vec<&String> = cur.intersection(&prev).collect();
    let pool: Vec<&String> = if shared.is_empty() { cur.iter().collect() } else { shared };
    pool.into_iter()
        .map(|t| cfg.weight(tagger.tag(t)))
        .fold(0.0, f64::max)
}

/// `-λ Σ_k 1[cos(h_k, h_{k-1}) > τ] · weight(k)` over consecutive sentence pairs.
///
/// `sentences` and `dense` are parallel: `dense[k]` is the unit-norm dense
/// embedding of `sentences[k]`.
pub fn repetition_penalty_from(
    sentences: &[&str],
    dense: &[Vec<f64>],
    cfg: &RepetitionConfig,
    tagger: &dyn PosTagger,
) -> f64 {
    if cfg.lambda == 0.0 || sentences.len() < 2 {
        return 0.0;
    }
    let mut hits = 0.0;
    for k in 1..sentences.len() {
        let cos = crate::embedding::unit_dot(&dense[k], &dense[k - 1]);
        if cos > cfg.tau {
            hits += repeat_weight(sentences[k], sentences[k - 1], cfg, tagger);
        }
    }
    if hits == 0.0 {
        0.0
    } else {
        -cfg.lambda * hits
    }
}
