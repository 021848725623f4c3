//! Group-relative advantages and the clipped surrogate objective.

use serde::{Deserialize, Serialize};

use super::policy::{log_softmax, Features, HeadKind, ToyPolicy};
use crate::distill::Trajectory;
use crate::error::{Error, Result};

/// Floor added to the group standard deviation.
pub const ADVANTAGE_EPS: f64 = 1e-8;

/// `(r − mean) / (std + 1e-8)` with the population standard deviation.
///
/// A group of identical rewards gets exactly zero advantages; rounding in
/// the mean would otherwise leave residues of order 1e-9.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Precondition("a group needs at least two rewards".into()));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect())
}

/// `min(ρA, clip(ρ, 1 − ε_low, 1 + ε_high)·A)`.
#[inline]
pub fn clip_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps_low, 1.0 + eps_high) * advantage)
}

/// One sampled token with the state it was sampled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub head: HeadKind,
    pub features: Features,
    pub token: usize,
    /// Log-probability under the sampling policy at temperature 1.
    pub logp_old: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub tokens: Vec<TokenRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub case_id: String,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    pub fn new(case_id: impl Into<String>, rollouts: Vec<Rollout>, rewards: Vec<f64>) -> Result<Self> {
        if rollouts.len() != rewards.len() {
            return Err(Error::LengthMismatch {
                left: rollouts.len(),
                right: rewards.len(),
            });
        }
        let advantages = group_advantages(&rewards)?;
        Ok(GroupBatch {
            case_id: case_id.into(),
            rollouts,
            rewards,
            advantages,
        })
    }

    pub fn token_count(&self) -> usize {
        self.rollouts.iter().map(|r| r.tokens.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_weight: f64,
}

/// Loss parts, averaged over tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    pub surrogate: f64,
    pub kl: f64,
    pub clipped_fraction: f64,
}

/// Loss `−mean(term) + kl_weight·mean(KL(π ‖ π_ref))` over all tokens of
/// the batch, with its analytic gradient in [`ToyPolicy::params`] layout.
///
/// The KL is exact over the full next-token distribution at every visited
/// state. Returns `(loss, grad, parts)`.
pub fn surrogate_loss(
    batch: &GroupBatch,
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    p: &ObjectiveParams,
) -> Result<(f64, Vec<f64>, LossParts)> {
    if !policy.same_shape(reference) {
        return Err(Error::Precondition("policy and reference shapes differ".into()));
    }
    let n = batch.token_count();
    let na = policy.action.weights.len();
    let mut grad = vec![0.0; na + policy.answer.weights.len()];
    if n == 0 {
        return Ok((0.0, grad, LossParts::default()));
    }
    let inv_n = 1.0 / n as f64;
    let mut term_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    for (rollout, &adv) in batch.rollouts.iter().zip(&batch.advantages) {
        for t in &rollout.tokens {
            let head = policy.head(t.head);
            head.check(&t.features, Some(t.token))?;
            let v = head.vocab_size();
            let logp = log_softmax(&head.logits(&t.features));
            let logq = reference.head(t.head).log_probs(&t.features);
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();

            let ratio = (logp[t.token] - t.logp_old).exp();
            let unclipped = ratio * adv;
            let term = clip_term(ratio, adv, p.clip_low, p.clip_high);
            term_sum += term;
            // The clipped branch is constant in the logits.
            let binding = term < unclipped;
            let scale = if binding { 0.0 } else { -adv * ratio * inv_n };
            clipped += usize::from(binding);

            let kl: f64 = probs.iter().zip(logp.iter().zip(&logq)).map(|(pi, (lp, lq))| pi * (lp - lq)).sum();
            kl_sum += kl;

            // dL/dz_k = scale·(1[k=y] − p_k) + w·p_k(log p_k − log q_k − KL) / n.
            let mut dz = vec![0.0; v];
            for k in 0..v {
                let indicator = if k == t.token { 1.0 } else { 0.0 };
                dz[k] = scale * (indicator - probs[k]) + p.kl_weight * inv_n * probs[k] * (logp[k] - logq[k] - kl);
            }
            let offset = match t.head {
                HeadKind::Action => 0,
                HeadKind::Answer => na,
            };
            for &(f, x) in &t.features {
                let row = offset + f * v;
                for k in 0..v {
                    grad[row + k] += x * dz[k];
                }
            }
        }
    }
    let parts = LossParts {
        surrogate: -term_sum * inv_n,
        kl: kl_sum * inv_n,
        clipped_fraction: clipped as f64 * inv_n,
    };
    Ok((parts.surrogate + p.kl_weight * parts.kl, grad, parts))
}
