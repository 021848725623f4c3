//! The episode reward kernel.
//!
//! An episode is scored as `answer_weight · R_token + action_weight · R_action`
//! where `R_action` is the mean best-match subword Jaccard of the issued
//! retrieval keywords and `R_token = R_hybrid + R_rep` combines chunk-wise
//! hybrid similarity with a penalty for duplicated consecutive sentences.

mod pos;
mod repetition;
mod similarity;
mod subword;

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use pos::{FunctionWordTagger, PosClass, PosTagger};
pub use repetition::{repeat_weight, repetition_penalty_from, RepetitionConfig};
pub use similarity::{hybrid_from_chunks, pair_score, Chunking, EmbeddedChunk, HybridSimilarityParams};
pub use subword::{action_reward, jaccard, subword_set, MatchLevel, SubwordConfig};

use crate::corpus::{split_sentences, tokenize};
use crate::distill::Trajectory;
use crate::embedding::{maxsim, EmbeddingProvider, HybridEmbedding};
use crate::error::{Error, Result};

pub use crate::lexical::lexical_score;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeRewardWeights {
    pub answer_weight: f64,
    pub action_weight: f64,
}

impl Default for EpisodeRewardWeights {
    fn default() -> Self {
        EpisodeRewardWeights {
            answer_weight: 1.0,
            action_weight: 0.8,
        }
    }
}

/// How the final answer is compared with the reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerMatch {
    /// Hybrid similarity plus repetition penalty.
    #[default]
    Hybrid,
    /// 1 when the token sequences are identical, else 0.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub subword: SubwordConfig,
    pub hybrid: HybridSimilarityParams,
    pub repetition: RepetitionConfig,
    pub episode: EpisodeRewardWeights,
    pub answer_match: AnswerMatch,
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        self.subword.validate()?;
        self.hybrid.validate()?;
        self.repetition.validate()?;
        let e = self.episode;
        if !(e.answer_weight >= 0.0 && e.action_weight >= 0.0) {
            return Err(Error::InvalidConfig("rewards.episode weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Component breakdown of an answer score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRewardBreakdown {
    pub hybrid: f64,
    pub repetition: f64,
    pub token_reward: f64,
}

const EMBED_MEMO_LIMIT: usize = 100_000;

/// Stateless scorer bound to an embedding provider.
///
/// Sentence embeddings are memoized; providers are deterministic, so the
/// memo never changes a result.
#[derive(Debug)]
pub struct RewardKernel {
    provider: Arc<dyn EmbeddingProvider>,
    tagger: Arc<dyn PosTagger>,
    params: RewardParams,
    memo: Mutex<HashMap<String, HybridEmbedding>>,
}

impl RewardKernel {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, params: RewardParams) -> Result<Self> {
        params.validate()?;
        Ok(RewardKernel {
            provider,
            tagger: Arc::new(FunctionWordTagger),
            params,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_tagger(mut self, tagger: Arc<dyn PosTagger>) -> Self {
        self.tagger = tagger;
        self
    }

    pub fn params(&self) -> &RewardParams {
        &self.params
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    /// Same provider and tagger, different parameters.
    pub fn with_params(&self, params: RewardParams) -> Result<Self> {
        params.validate()?;
        Ok(RewardKernel {
            provider: Arc::clone(&self.provider),
            tagger: Arc::clone(&self.tagger),
            params,
            memo: Mutex::new(HashMap::new()),
        })
    }

    fn embed_all(&self, texts: &[&str]) -> Result<Vec<HybridEmbedding>> {
        let mut out: Vec<Option<HybridEmbedding>> = {
            let memo = self.memo.lock();
            texts.iter().map(|t| memo.get(*t).cloned()).collect()
        };
        let missing: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, e)| e.is_none())
            .map(|(t, _)| *t)
            .collect();
        if !missing.is_empty() {
            let fresh = self.provider.embed_batch(&missing)?;
            let mut memo = self.memo.lock();
            if memo.len() + fresh.len() > EMBED_MEMO_LIMIT {
                memo.clear();
            }
            let mut fresh = fresh.into_iter();
            for (slot, text) in out.iter_mut().zip(texts) {
                if slot.is_none() {
                    let e = fresh.next().expect("provider returned one embedding per text");
                    memo.insert(text.to_string(), e.clone());
                    *slot = Some(e);
                }
            }
        }
        Ok(out.into_iter().map(|e| e.expect("filled")).collect())
    }

    fn units<'a>(&self, text: &'a str) -> Vec<&'a str> {
        match self.params.hybrid.chunking {
            Chunking::Sentence => split_sentences(text),
            Chunking::WholeText => {
                if tokenize(text).is_empty() {
                    Vec::new()
                } else {
                    vec![text.trim()]
                }
            }
        }
    }

    fn embedded_units(&self, text: &str) -> Result<Vec<EmbeddedChunk>> {
        let units = self.units(text);
        let embeddings = self.embed_all(&units)?;
        Ok(units
            .iter()
            .zip(embeddings)
            .map(|(u, embedding)| EmbeddedChunk {
                tokens: tokenize(u),
                embedding,
            })
            .collect())
    }

    /// Chunk-wise hybrid similarity of `prediction` against `reference`, in `[0, 1]`.
    pub fn hybrid_similarity(&self, prediction: &str, reference: &str) -> Result<f64> {
        let p = self.embedded_units(prediction)?;
        if p.is_empty() {
            return Ok(0.0);
        }
        let t = self.embedded_units(reference)?;
        Ok(hybrid_from_chunks(&p, &t, &self.params.hybrid))
    }

    /// Late-interaction MaxSim of `a` against `b`, in `[0, 1]`.
    pub fn colbert_score(&self, a: &str, b: &str) -> Result<f64> {
        let e = self.embed_all(&[a, b])?;
        Ok(maxsim(&e[0].multi, &e[1].multi))
    }

    /// Non-positive penalty for duplicated consecutive sentences of `answer`.
    pub fn repetition_penalty(&self, answer: &str) -> Result<f64> {
        let cfg = &self.params.repetition;
        let sentences = split_sentences(answer);
        if cfg.lambda == 0.0 || sentences.len() < 2 {
            return Ok(0.0);
        }
        let dense: Vec<Vec<f64>> = self.embed_all(&sentences)?.into_iter().map(|e| e.dense).collect();
        Ok(repetition_penalty_from(&sentences, &dense, cfg, self.tagger.as_ref()))
    }

    /// `R_hybrid + R_rep`, or exact match when the answer comparison is ablated.
    pub fn token_reward_breakdown(&self, prediction: &str, reference: &str) -> Result<TokenRewardBreakdown> {
        if self.params.answer_match == AnswerMatch::Exact {
            let p = tokenize(prediction);
            let exact = if !p.is_empty() && p == tokenize(reference) { 1.0 } else { 0.0 };
            return Ok(TokenRewardBreakdown {
                hybrid: exact,
                repetition: 0.0,
                token_reward: exact,
            });
        }
        let hybrid = self.hybrid_similarity(prediction, reference)?;
        if hybrid == 0.0 && tokenize(prediction).is_empty() {
            return Ok(TokenRewardBreakdown {
                hybrid: 0.0,
                repetition: 0.0,
                token_reward: 0.0,
            });
        }
        let repetition = self.repetition_penalty(prediction)?;
        Ok(TokenRewardBreakdown {
            hybrid,
            repetition,
            token_reward: hybrid + repetition,
        })
    }

    pub fn token_reward(&self, prediction: &str, reference: &str) -> Result<f64> {
        Ok(self.token_reward_breakdown(prediction, reference)?.token_reward)
    }

    pub fn action_reward(&self, predicted: &[String], gold: &[String]) -> Result<f64> {
        action_reward(predicted, gold, &self.params.subword)
    }

    /// Scores a finished episode and returns `(action, answer, total)`.
    pub fn episode_components(&self, keywords: &[String], answer: &str, gold_keywords: &[String], gold_answer: &str) -> Result<(f64, f64, f64)> {
        if gold_keywords.is_empty() {
            return Err(Error::MissingGold("gold_keywords"));
        }
        if gold_answer.trim().is_empty() {
            return Err(Error::MissingGold("gold_answer"));
        }
        let w = self.params.episode;
        let action = if w.action_weight == 0.0 { 0.0 } else { self.action_reward(keywords, gold_keywords)? };
        let answer_r = if w.answer_weight == 0.0 { 0.0 } else { self.token_reward(answer, gold_answer)? };
        Ok((action, answer_r, w.answer_weight * answer_r + w.action_weight * action))
    }

    /// `answer_weight · token_reward + action_weight · action_reward`.
    pub fn episode_reward(&self, traj: &Trajectory) -> Result<f64> {
        Ok(self
            .episode_components(&traj.action_keywords(), &traj.answer, &traj.gold_keywords, &traj.gold_answer)?
            .2)
    }

    /// Fills `traj.rewards` and returns the total.
    pub fn score_trajectory(&self, traj: &mut Trajectory) -> Result<f64> {
        let (action, answer, total) =
            self.episode_components(&traj.action_keywords(), &traj.answer, &traj.gold_keywords, &traj.gold_answer)?;
        traj.rewards = crate::distill::TrajectoryRewards { action, answer, total };
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{CaseRecord, Sex, Step};
    use crate::embedding::{EmbeddingProviderConfig, LocalProvider};

    fn kernel_with(params: RewardParams) -> RewardKernel {
        let provider = Arc::new(LocalProvider::new(EmbeddingProviderConfig::local(3)).unwrap());
        RewardKernel::new(provider, params).unwrap()
    }

    fn kernel() -> RewardKernel {
        kernel_with(RewardParams::default())
    }

    #[test]
    fn hybrid_identity_and_bounds() {
        let k = kernel();
        let t = "Meropenem 1g IV q8h. Vancomycin 15mg/kg q12h.";
        assert!(k.hybrid_similarity(t, t).unwrap() >= 0.99);
        for params in [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (0.2, 0.5, 0.3)] {
            let k = kernel_with(RewardParams {
                hybrid: HybridSimilarityParams::weights(params.0, params.1, params.2),
                ..Default::default()
            });
            assert!(k.hybrid_similarity(t, t).unwrap() >= 0.99);
            let s = k.hybrid_similarity("ceftriaxone 2g daily", t).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
        assert_eq!(k.hybrid_similarity("", t).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_dense_weight_is_dense_cosine() {
        let k = kernel_with(RewardParams {
            hybrid: HybridSimilarityParams::weights(1.0, 0.0, 0.0),
            ..Default::default()
        });
        let (a, b) = ("meropenem 1g q8h", "meropenem 2g q6h");
        let ea = k.provider().embed(a).unwrap();
        let eb = k.provider().embed(b).unwrap();
        let cos = crate::embedding::cosine(&ea.dense, &eb.dense).unwrap().max(0.0);
        assert!((k.hybrid_similarity(a, b).unwrap() - cos).abs() < 1e-12);
    }

    #[test]
    fn sentence_chunking_pairs_sentences_independently() {
        let reference = "Meropenem 1g IV q8h for severe pneumonia. Vancomycin 15mg/kg q12h for MRSA coverage.";
        let prediction = "Vancomycin 15mg/kg q12h for MRSA coverage. Meropenem 1g IV q8h for severe pneumonia. Add azithromycin.";
        let chunked = kernel().hybrid_similarity(prediction, reference).unwrap();
        let whole = kernel_with(RewardParams {
            hybrid: HybridSimilarityParams {
                chunking: Chunking::WholeText,
                ..Default::default()
            },
            ..Default::default()
        })
        .hybrid_similarity("Vancomycin 15mg/kg q12h for MRSA coverage. Meropenem 1g IV q8h for severe pneumonia.", "Meropenem 1g IV q8h for severe pneumonia.")
        .unwrap();
        let two = kernel()
            .hybrid_similarity("Vancomycin 15mg/kg q12h for MRSA coverage. Meropenem 1g IV q8h for severe pneumonia.", reference)
            .unwrap();
        assert!(two > 0.99, "{two}");
        assert!(two > whole, "chunked {two} whole {whole}");
        assert!(chunked < two);
    }

    #[test]
    fn repetition_examples() {
        let k = kernel();
        assert_eq!(k.repetition_penalty("Start meropenem now.").unwrap(), 0.0);
        let rep = k
            .repetition_penalty("Start meropenem now. Start meropenem now. Start meropenem now.")
            .unwrap();
        assert!((rep + 0.2).abs() < 1e-12, "{rep}");

        assert_eq!(k.repetition_penalty("1g IV q8h. 1g IV q8h.").unwrap(), 0.0);
        let cfg = RepetitionConfig::default();
        let w = repeat_weight("Vancomycin 1g IV q8h.", "Meropenem 1g IV q8h.", &cfg, &FunctionWordTagger);
        assert_eq!(w, 0.0);
        assert_eq!(repeat_weight("and then.", "and then.", &cfg, &FunctionWordTagger), 0.3);

        let off = kernel_with(RewardParams {
            repetition: RepetitionConfig {
                lambda: 0.0,
                ..Default::default()
            },
            ..Default::default()
        });
        assert_eq!(off.repetition_penalty("Start meropenem now. Start meropenem now.").unwrap(), 0.0);
    }

    #[test]
    fn token_reward_examples() {
        let k = kernel();
        let t = "Meropenem 1g IV q8h. Monitor renal function.";
        assert!(k.token_reward(t, t).unwrap() >= 0.99);
        assert_eq!(k.token_reward("", t).unwrap(), 0.0);
        let dup = format!("{t} Monitor renal function.");
        let h = k.hybrid_similarity(&dup, t).unwrap();
        assert!(k.token_reward(&dup, t).unwrap() < h);
    }

    fn trajectory(answer: &str, keywords: &[&str]) -> Trajectory {
        let mut t = Trajectory::new(CaseRecord {
            case_id: "c".into(),
            age: 60,
            sex: Sex::Male,
            chief_complaint: "fever".into(),
            history: "none".into(),
            present_illness: "cough".into(),
            gold_keywords: vec!["pneumonia".into(), "renal".into()],
            gold_answer: "ceftriaxone 1g q24h".into(),
        });
        t.steps.push(Step::thought("consider pneumonia"));
        let kws: Vec<String> = keywords.iter().map(|s| s.to_string()).collect();
        t.steps.push(Step::action(&kws));
        t.steps.push(Step::observation("ceftriaxone 1g q24h", vec![]));
        t.answer = answer.into();
        t
    }

    #[test]
    fn episode_reward_examples() {
        let perfect = trajectory("ceftriaxone 1g q24h", &["renal", "pneumonia"]);
        let r = kernel().episode_reward(&perfect).unwrap();
        assert!((r - 1.8).abs() < 0.01, "{r}");

        let answer_only = kernel_with(RewardParams {
            episode: EpisodeRewardWeights {
                answer_weight: 1.0,
                action_weight: 0.0,
            },
            ..Default::default()
        });
        let partial = trajectory("ceftriaxone 2g", &["cough"]);
        assert_eq!(
            answer_only.episode_reward(&partial).unwrap(),
            answer_only.token_reward("ceftriaxone 2g", "ceftriaxone 1g q24h").unwrap()
        );

        let zero = kernel_with(RewardParams {
            episode: EpisodeRewardWeights {
                answer_weight: 0.0,
                action_weight: 0.0,
            },
            ..Default::default()
        });
        assert_eq!(zero.episode_reward(&partial).unwrap(), 0.0);

        let mut missing = partial.clone();
        missing.gold_keywords.clear();
        assert!(matches!(kernel().episode_reward(&missing), Err(Error::MissingGold(_))));
    }

    #[test]
    fn exact_match_ablation() {
        let k = kernel_with(RewardParams {
            answer_match: AnswerMatch::Exact,
            ..Default::default()
        });
        assert_eq!(k.token_reward("Ceftriaxone 1g q24h", "ceftriaxone 1g q24h.").unwrap(), 1.0);
        assert_eq!(k.token_reward("ceftriaxone 2g q24h", "ceftriaxone 1g q24h").unwrap(), 0.0);
    }

    #[test]
    fn invalid_weights_rejected() {
        let provider = Arc::new(LocalProvider::new(EmbeddingProviderConfig::local(3)).unwrap());
        let params = RewardParams {
            hybrid: HybridSimilarityParams::weights(0.5, 0.5, 0.2),
            ..Default::default()
        };
        assert!(matches!(RewardKernel::new(provider, params), Err(Error::InvalidConfig(_))));
    }
}
