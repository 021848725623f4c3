//! Linear softmax policy with an action head and an answer head.
//!
//! Both heads decode autoregressively over a fixed vocabulary whose last
//! entry is the stop token. Logits are `Wᵀx` for a sparse feature vector `x`
//! blocked by decoding position. The action head sees the words of the case
//! text; the answer head sees only a bias and a 1/rank-weighted indicator of
//! each answer token in the retrieved evidence, so it has no memory of
//! individual cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Features = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Action,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub feature_dim: usize,
    pub vocab: Vec<String>,
    pub max_len: usize,
    /// Row-major `[feature_dim × vocab]`.
    pub weights: Vec<f64>,
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl Head {
    pub fn new(feature_dim: usize, vocab: Vec<String>, max_len: usize) -> Result<Self> {
        if feature_dim == 0 || vocab.len() < 2 || max_len == 0 {
            return Err(Error::InvalidConfig("policy head needs features, >= 2 tokens and max_len >= 1".into()));
        }
        Ok(Head {
            weights: vec![0.0; feature_dim * vocab.len()],
            feature_dim,
            vocab,
            max_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn stop(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn check(&self, x: &Features, token: Option<usize>) -> Result<()> {
        if let Some(&(f, _)) = x.iter().find(|(f, _)| *f >= self.feature_dim) {
            return Err(Error::Precondition(format!("feature {f} outside dimension {}", self.feature_dim)));
        }
        if let Some(t) = token.filter(|t| *t >= self.vocab.len()) {
            return Err(Error::Precondition(format!("token {t} outside vocabulary of {}", self.vocab.len())));
        }
        Ok(())
    }

    pub fn logits(&self, x: &Features) -> Vec<f64> {
        let v = self.vocab.len();
        let mut z = vec![0.0; v];
        for &(f, val) in x {
            let row = &self.weights[f * v..(f + 1) * v];
            for (zi, w) in z.iter_mut().zip(row) {
                *zi += val * w;
            }
        }
        z
    }

    pub fn log_probs(&self, x: &Features) -> Vec<f64> {
        log_softmax(&self.logits(x))
    }

    /// Samples at `temperature`; zero means greedy (lowest index on ties).
    pub fn sample(&self, x: &Features, temperature: f64, rng: &mut impl Rng) -> usize {
        let z = self.logits(x);
        if temperature <= 0.0 {
            return z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
        }
        let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
        let p: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
        let mut u: f64 = rng.gen();
        for (i, pi) in p.iter().enumerate() {
            if u < *pi {
                return i;
            }
            u -= pi;
        }
        p.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    /// Word ids (into a vocabulary of `text_dim` words) of each case's text.
    pub case_words: Vec<Vec<usize>>,
    pub text_dim: usize,
    pub action: Head,
    pub answer: Head,
}

impl ToyPolicy {
    /// Zero-initialised (uniform) policy with 3 keyword and 4 answer positions.
    pub fn new(case_words: Vec<Vec<usize>>, text_dim: usize, keyword_vocab: Vec<String>, answer_vocab: Vec<String>) -> Result<Self> {
        Self::with_lengths(case_words, text_dim, keyword_vocab, 3, answer_vocab, 4)
    }

    pub fn with_lengths(
        case_words: Vec<Vec<usize>>,
        text_dim: usize,
        keyword_vocab: Vec<String>,
        action_len: usize,
        answer_vocab: Vec<String>,
        answer_len: usize,
    ) -> Result<Self> {
        if case_words.is_empty() {
            return Err(Error::InvalidConfig("policy needs at least one case".into()));
        }
        if case_words.iter().flatten().any(|w| *w >= text_dim) {
            return Err(Error::InvalidConfig("case word id outside the text vocabulary".into()));
        }
        let va = answer_vocab.len();
        Ok(ToyPolicy {
            action: Head::new((text_dim + 1) * action_len, keyword_vocab, action_len)?,
            answer: Head::new((1 + va) * answer_len, answer_vocab, answer_len)?,
            case_words,
            text_dim,
        })
    }

    pub fn n_cases(&self) -> usize {
        self.case_words.len()
    }

    /// Adds seeded Gaussian noise with standard deviation `sd` to every weight.
    pub fn perturb(&mut self, sd: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd.max(0.0)).expect("finite sd");
        for w in self.action.weights.iter_mut().chain(self.answer.weights.iter_mut()) {
            *w += normal.sample(&mut rng);
        }
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        match kind {
            HeadKind::Action => &self.action,
            HeadKind::Answer => &self.answer,
        }
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> &mut Head {
        match kind {
            HeadKind::Action => &mut self.action,
            HeadKind::Answer => &mut self.answer,
        }
    }

    /// Action-head features: the case's words and a bias, blocked by position.
    pub fn action_features(&self, case: usize, pos: usize) -> Features {
        let base = pos * (self.text_dim + 1);
        let mut x: Features = self.case_words[case].iter().map(|&w| (base + w, 1.0)).collect();
        x.push((base + self.text_dim, 1.0));
        x
    }

    /// Answer-head features: position bias and the evidence vector (one
    /// weight per answer token), both blocked by position.
    pub fn answer_features(&self, pos: usize, evidence: &[f64]) -> Features {
        let l = self.answer.max_len;
        let va = self.answer.vocab_size();
        let base = l + pos * va;
        let mut x = vec![(pos, 1.0)];
        x.extend(evidence.iter().enumerate().filter(|(_, e)| **e != 0.0).map(|(v, &e)| (base + v, e)));
        x
    }

    /// All weights, action head first.
    pub fn params(&self) -> Vec<f64> {
        self.action.weights.iter().chain(&self.answer.weights).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let na = self.action.weights.len();
        if params.len() != na + self.answer.weights.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: na + self.answer.weights.len(),
            });
        }
        self.action.weights.copy_from_slice(&params[..na]);
        self.answer.weights.copy_from_slice(&params[na..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|w| w.is_finite())
    }

    pub fn same_shape(&self, other: &ToyPolicy) -> bool {
        self.action.weights.len() == other.action.weights.len()
            && self.answer.weights.len() == other.answer.weights.len()
            && self.action.vocab_size() == other.action.vocab_size()
            && self.answer.vocab_size() == other.answer.vocab_size()
    }
}
