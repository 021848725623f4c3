//! Subword-level Jaccard similarity and the action (keyword) reward.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Granularity of keyword matching.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchLevel {
    /// Character n-gram sets.
    #[default]
    Subword,
    /// Plain word-set Jaccard.
    Word,
}

/// How a word is decomposed into its deduplicated subword set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubwordConfig {
    pub ngram_sizes: BTreeSet<usize>,
    pub lowercase: bool,
    /// Characters removed before n-gramming.
    pub strip: String,
    /// Add the whole normalized word to its subword set.
    pub include_whole_word: bool,
    pub level: MatchLevel,
}

impl Default for SubwordConfig {
    /// Character bigrams of the lowercased word with joiner punctuation
    /// removed, so `covid` and `covid-19` share four of six bigrams.
    fn default() -> Self {
        SubwordConfig {
            ngram_sizes: BTreeSet::from([2]),
            lowercase: true,
            strip: "-_./".into(),
            include_whole_word: false,
            level: MatchLevel::Subword,
        }
    }
}

impl SubwordConfig {
    pub fn with_ngrams(sizes: impl IntoIterator<Item = usize>) -> Self {
        SubwordConfig {
            ngram_sizes: sizes.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ngram_sizes.is_empty() || self.ngram_sizes.contains(&0) {
            return Err(Error::InvalidConfig("subword.ngram_sizes must be non-empty with every n >= 1".into()));
        }
        Ok(())
    }

    fn normalize(&self, word: &str) -> String {
        let trimmed = word.trim();
        let kept = trimmed.chars().filter(|c| !self.strip.contains(*c));
        if self.lowercase {
            kept.flat_map(char::to_lowercase).collect()
        } else {
            kept.collect()
        }
    }
}

/// The deduplicated subword set C(w).
///
/// A non-empty word shorter than every n-gram size contributes itself, so
/// every non-empty word has a non-empty set.
pub fn subword_set(word: &str, cfg: &SubwordConfig) -> HashSet<String> {
    if cfg.level == MatchLevel::Word {
        return tokenize(word).into_iter().collect();
    }
    let norm = cfg.normalize(word);
    let chars: Vec<char> = norm.chars().collect();
    let mut out = HashSet::new();
    if chars.is_empty() {
        return out;
    }
    for &n in &cfg.ngram_sizes {
        if n == 0 || n > chars.len() {
            continue;
        }
        for gram in chars.windows(n) {
            out.insert(gram.iter().collect());
        }
    }
    if cfg.include_whole_word || out.is_empty() {
        out.insert(norm);
    }
    out
}

fn set_jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// `|C(a) ∩ C(b)| / |C(a) ∪ C(b)|`; 0 when both sets are empty.
pub fn jaccard(a: &str, b: &str, cfg: &SubwordConfig) -> f64 {
    set_jaccard(&subword_set(a, cfg), &subword_set(b, cfg))
}

/// Mean over predicted keywords of their best Jaccard against any gold keyword.
///
/// Empty predictions score 0; an empty gold list is an error.
pub fn action_reward(predicted: &[String], gold: &[String], cfg: &SubwordConfig) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let gold_sets: Vec<HashSet<String>> = gold.iter().map(|g| subword_set(g, cfg)).collect();
    let total: f64 = predicted
        .iter()
        .map(|p| {
            let ps = subword_set(p, cfg);
            gold_sets.iter().map(|gs| set_jaccard(&ps, gs)).fold(0.0, f64::max)
        })
        .sum();
    Ok(total / predicted.len() as f64)
}
