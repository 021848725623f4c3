//! Rollouts, the training loop and learning curves.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::Env;
use super::objective::{surrogate_loss, GroupBatch, ObjectiveParams, Rollout, TokenRecord};
use super::policy::{HeadKind, ToyPolicy};
use crate::corpus::tokenize;
use crate::distill::{observation_step, Step, Trajectory};
use crate::error::{Error, Result};
use crate::rewards::{RewardKernel, RewardParams};

pub const DEFAULT_EMA_BETA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    /// Adam with the usual (0.9, 0.999, 1e-8) moments.
    #[default]
    Adam,
}

#[derive(Debug, Clone)]
struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, n: usize) -> Self {
        OptimizerState {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (t, g) in theta.iter_mut().zip(grad) {
                    *t -= lr * g;
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..theta.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_weight: f64,
    pub optimizer: Optimizer,
    pub lr: f64,
    /// Gradient updates per sampled group.
    pub epochs: usize,
    pub steps: usize,
    pub seed: u64,
    pub temperature: f64,
    /// When false the action still runs but its evidence is withheld.
    pub retrieval: bool,
    pub ema_beta: f64,
    /// Global gradient-norm cap; zero disables it.
    pub max_grad_norm: f64,
    pub reward: RewardParams,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_low: 0.1,
            clip_high: 0.4,
            kl_weight: 0.001,
            optimizer: Optimizer::Adam,
            lr: 0.03,
            epochs: 2,
            steps: 300,
            seed: 42,
            temperature: 1.0,
            retrieval: true,
            ema_beta: DEFAULT_EMA_BETA,
            max_grad_norm: 0.0,
            reward: RewardParams::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("grpo.group_size must be >= 2".into()));
        }
        if !(self.clip_low > 0.0 && self.clip_low < 1.0) || !(self.clip_high >= self.clip_low) {
            return Err(Error::InvalidConfig("grpo clip bounds need 0 < clip_low < 1 and clip_high >= clip_low".into()));
        }
        if !(self.kl_weight >= 0.0) || !(self.lr >= 0.0) || !(self.temperature >= 0.0) || !(self.max_grad_norm >= 0.0) {
            return Err(Error::InvalidConfig("grpo kl_weight, lr, temperature and max_grad_norm must be >= 0".into()));
        }
        if self.epochs == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("grpo.epochs and grpo.steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.ema_beta) {
            return Err(Error::InvalidConfig("grpo.ema_beta must lie in [0, 1)".into()));
        }
        self.reward.validate()
    }

    pub fn objective(&self) -> ObjectiveParams {
        ObjectiveParams {
            clip_low: self.clip_low,
            clip_high: self.clip_high,
            kl_weight: self.kl_weight,
        }
    }
}

/// `s₀ = x₀`, `s_k = β·s_{k−1} + (1 − β)·x_k`.
pub fn ema_smooth(series: &[f64], beta: f64) -> Result<Vec<f64>> {
    let (&first, rest) = series.split_first().ok_or(Error::Empty("series"))?;
    let mut out = Vec::with_capacity(series.len());
    out.push(first);
    let mut s = first;
    for &x in rest {
        s = beta * s + (1.0 - beta) * x;
        out.push(s);
    }
    Ok(out)
}

/// Per-step group-mean rewards. `raw_reward` is the training reward;
/// `metric_reward` rescores the same rollouts under the default reward.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningCurve {
    pub steps: Vec<usize>,
    pub raw_reward: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub metric_reward: Vec<f64>,
    pub metric_smoothed: Vec<f64>,
    pub loss: Vec<f64>,
    pub ema_beta: f64,
}

fn window_mean(xs: &[f64], from_end: bool, n: usize) -> f64 {
    let n = n.min(xs.len()).max(1);
    let w = if from_end { &xs[xs.len().saturating_sub(n)..] } else { &xs[..n.min(xs.len())] };
    if w.is_empty() {
        return 0.0;
    }
    w.iter().sum::<f64>() / w.len() as f64
}

impl LearningCurve {
    pub fn initial_smoothed(&self, window: usize) -> f64 {
        window_mean(&self.smoothed, false, window)
    }

    pub fn final_smoothed(&self, window: usize) -> f64 {
        window_mean(&self.smoothed, true, window)
    }

    pub fn final_metric(&self, window: usize) -> f64 {
        window_mean(&self.metric_smoothed, true, window)
    }

    /// `step reward smoothed metric metric_smoothed loss`, one line per step.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for i in 0..self.steps.len() {
            s.push_str(&format!(
                "step={} reward={:.6} smoothed={:.6} metric={:.6} metric_smoothed={:.6} loss={:.6}\n",
                self.steps[i], self.raw_reward[i], self.smoothed[i], self.metric_reward[i], self.metric_smoothed[i], self.loss[i]
            ));
        }
        s
    }
}

/// Evidence vector over the answer vocabulary: `Σ_rank 1/rank` over hits
/// whose text contains the token.
fn evidence(env: &Env, hits: &[crate::index::ScoredHit]) -> Vec<f64> {
    let mut ev = vec![0.0; env.answer_vocab.len()];
    for (rank, hit) in hits.iter().enumerate() {
        let tokens: HashSet<String> = tokenize(&hit.text).into_iter().collect();
        for (v, word) in env.answer_vocab.iter().enumerate() {
            if tokens.contains(word) {
                ev[v] += 1.0 / (rank + 1) as f64;
            }
        }
    }
    ev
}

fn decode(
    policy: &ToyPolicy,
    head: HeadKind,
    features: impl Fn(usize) -> super::policy::Features,
    temperature: f64,
    rng: &mut impl Rng,
    out: &mut Vec<TokenRecord>,
) -> Vec<String> {
    let h = policy.head(head);
    let mut words = Vec::new();
    for pos in 0..h.max_len {
        let x = features(pos);
        let token = h.sample(&x, temperature, rng);
        let logp_old = h.log_probs(&x)[token];
        out.push(TokenRecord {
            head,
            features: x,
            token,
            logp_old,
        });
        if token == h.stop() {
            break;
        }
        words.push(h.vocab[token].clone());
    }
    words
}

/// Samples one episode for case `case_idx`: keywords, retrieval, answer.
pub fn rollout(
    policy: &ToyPolicy,
    case_idx: usize,
    env: &Env,
    temperature: f64,
    retrieval: bool,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let case = env
        .cases
        .get(case_idx)
        .ok_or_else(|| Error::Precondition(format!("case index {case_idx} out of range")))?;
    if policy.n_cases() != env.cases.len() || policy.answer.vocab_size() != env.answer_vocab.len() {
        return Err(Error::Precondition("policy was built for a different environment".into()));
    }
    let mut tokens = Vec::new();
    let mut traj = Trajectory::new(case.clone());
    traj.steps.push(Step::thought("Choose retrieval keywords for the case."));

    let keywords = decode(policy, HeadKind::Action, |p| policy.action_features(case_idx, p), temperature, rng, &mut tokens);
    let mut ev = vec![0.0; env.answer_vocab.len()];
    if !keywords.is_empty() {
        traj.steps.push(Step::action(&keywords));
        if retrieval {
            let (hits, _) = env.index.cached_search(&env.retrieval_query(&keywords), &env.cache, env.now)?;
            ev = evidence(env, &hits);
            traj.steps.push(observation_step(&hits));
        } else {
            traj.steps.push(Step::observation("", Vec::new()));
        }
    }
    traj.steps.push(Step::thought("Compose the regimen."));
    let answer = decode(policy, HeadKind::Answer, |p| policy.answer_features(p, &ev), temperature, rng, &mut tokens);
    traj.answer = answer.join(" ");
    Ok(Rollout { trajectory: traj, tokens })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub curve: LearningCurve,
}

/// Runs GRPO from the zero (uniform) policy.
pub fn train(env: &Env, cfg: &GrpoConfig) -> Result<TrainOutcome> {
    train_from(env, cfg, env.initial_policy()?)
}

/// Runs GRPO from `initial`, which also serves as the frozen KL reference.
pub fn train_from(env: &Env, cfg: &GrpoConfig, initial: ToyPolicy) -> Result<TrainOutcome> {
    train_observed(env, cfg, initial, |_| true)
}

/// [`train_from`] that shows the curve to `observe` after every step;
/// returning false stops training early.
pub fn train_observed(env: &Env, cfg: &GrpoConfig, initial: ToyPolicy, mut observe: impl FnMut(&LearningCurve) -> bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let provider = env.index.provider().clone();
    let kernel = RewardKernel::new(provider.clone(), cfg.reward.clone())?;
    let metric_params = RewardParams::default();
    let metric = (cfg.reward != metric_params)
        .then(|| RewardKernel::new(provider, metric_params))
        .transpose()?;
    let reference = initial.clone();
    let mut policy = initial;
    let mut opt = OptimizerState::new(cfg.optimizer, policy.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obj = cfg.objective();
    let mut curve = LearningCurve {
        ema_beta: cfg.ema_beta,
        ..Default::default()
    };

    for step in 0..cfg.steps {
        let case_idx = rng.gen_range(0..env.cases.len());
        let case = &env.cases[case_idx];
        let mut rollouts = Vec::with_capacity(cfg.group_size);
        let mut rewards = Vec::with_capacity(cfg.group_size);
        let mut metric_sum = 0.0;
        for _ in 0..cfg.group_size {
            let mut r = rollout(&policy, case_idx, env, cfg.temperature, cfg.retrieval, &mut rng)?;
            let total = kernel.score_trajectory(&mut r.trajectory)?;
            metric_sum += match &metric {
                Some(m) => m.episode_reward(&r.trajectory)?,
                None => total,
            };
            rewards.push(total);
            rollouts.push(r);
        }
        let batch = GroupBatch::new(case.case_id.clone(), rollouts, rewards)?;

        let mut first_loss = f64::NAN;
        for epoch in 0..cfg.epochs {
            let (loss, mut grad, _) = surrogate_loss(&batch, &policy, &reference, &obj)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            if epoch == 0 {
                first_loss = loss;
            }
            if cfg.max_grad_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.max_grad_norm {
                    grad.iter_mut().for_each(|g| *g *= cfg.max_grad_norm / norm);
                }
            }
            if cfg.lr > 0.0 {
                let mut theta = policy.params();
                opt.step(&mut theta, &grad, cfg.lr);
                policy.set_params(&theta)?;
            }
        }
        if !policy.is_finite() {
            return Err(Error::Diverged { step, loss: first_loss });
        }

        let g = cfg.group_size as f64;
        curve.steps.push(step);
        curve.raw_reward.push(batch.rewards.iter().sum::<f64>() / g);
        curve.metric_reward.push(metric_sum / g);
        curve.loss.push(first_loss);
        let ema = |prev: Option<&f64>, x: f64| prev.map_or(x, |s| cfg.ema_beta * s + (1.0 - cfg.ema_beta) * x);
        curve.smoothed.push(ema(curve.smoothed.last(), curve.raw_reward[step]));
        curve.metric_smoothed.push(ema(curve.metric_smoothed.last(), curve.metric_reward[step]));
        if !observe(&curve) {
            break;
        }
    }
    Ok(TrainOutcome { policy, curve })
}
