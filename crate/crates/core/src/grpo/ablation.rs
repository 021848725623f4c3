//! Paired base-versus-ablated training runs.

use serde::{Deserialize, Serialize};

use super::env::Env;
use super::train::{train, GrpoConfig, LearningCurve};
use crate::error::Result;
use crate::rewards::{AnswerMatch, MatchLevel};

pub const ABLATION_SEEDS: [u64; 3] = [42, 123, 2024];

/// Steps averaged for a run's final reward.
const FINAL_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationFactor {
    /// Asymmetric clip → symmetric ±0.2.
    ClipHigher,
    /// Hybrid answer similarity → exact match.
    RewardSmoothing,
    /// Subword Jaccard → word-level Jaccard.
    SubwordJaccard,
    /// Repetition penalty weight → 0.
    RepetitionPenalty,
}

impl AblationFactor {
    pub const ALL: [AblationFactor; 4] = [
        AblationFactor::ClipHigher,
        AblationFactor::RewardSmoothing,
        AblationFactor::SubwordJaccard,
        AblationFactor::RepetitionPenalty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationFactor::ClipHigher => "clip-higher",
            AblationFactor::RewardSmoothing => "reward-smoothing",
            AblationFactor::SubwordJaccard => "subword-jaccard",
            AblationFactor::RepetitionPenalty => "repetition-penalty",
        }
    }

    /// `base` with this factor switched off.
    pub fn apply(self, base: &GrpoConfig) -> GrpoConfig {
        let mut cfg = base.clone();
        match self {
            AblationFactor::ClipHigher => {
                cfg.clip_low = 0.2;
                cfg.clip_high = 0.2;
            }
            AblationFactor::RewardSmoothing => cfg.reward.answer_match = AnswerMatch::Exact,
            AblationFactor::SubwordJaccard => cfg.reward.subword.level = MatchLevel::Word,
            AblationFactor::RepetitionPenalty => cfg.reward.repetition.lambda = 0.0,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationArm {
    pub curves: Vec<LearningCurve>,
    /// Final smoothed default-metric reward per seed.
    pub final_metric: Vec<f64>,
    pub mean_final_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub factor: AblationFactor,
    pub seeds: Vec<u64>,
    pub base: AblationArm,
    pub ablated: AblationArm,
}

fn arm(env: &Env, cfg: &GrpoConfig, seeds: &[u64]) -> Result<AblationArm> {
    let mut curves = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = GrpoConfig { seed, ..cfg.clone() };
        curves.push(train(env, &run)?.curve);
    }
    let final_metric: Vec<f64> = curves.iter().map(|c| c.final_metric(FINAL_WINDOW)).collect();
    Ok(AblationArm {
        mean_final_metric: final_metric.iter().sum::<f64>() / final_metric.len().max(1) as f64,
        final_metric,
        curves,
    })
}

/// Trains base and ablated arms for each seed. Both arms are compared on
/// the default reward so the ablation cannot move the yardstick.
pub fn ablate(env: &Env, base: &GrpoConfig, factor: AblationFactor, seeds: &[u64]) -> Result<AblationReport> {
    Ok(AblationReport {
        factor,
        seeds: seeds.to_vec(),
        base: arm(env, base, seeds)?,
        ablated: arm(env, &factor.apply(base), seeds)?,
    })
}

impl AblationReport {
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for (i, seed) in self.seeds.iter().enumerate() {
            s.push_str(&format!(
                "ablation factor={} seed={seed} base={:.6} ablated={:.6}\n",
                self.factor.name(),
                self.base.final_metric[i],
                self.ablated.final_metric[i]
            ));
        }
        s.push_str(&format!(
            "ablation factor={} mean base={:.6} ablated={:.6}\n",
            self.factor.name(),
            self.base.mean_final_metric,
            self.ablated.mean_final_metric
        ));
        s
    }
}
