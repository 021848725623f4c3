//! Evaluation items and discordance strata.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    #[default]
    Low,
    Medium,
    High,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Low, Stratum::Medium, Stratum::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Low => "low",
            Stratum::Medium => "medium",
            Stratum::High => "high",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub case_text: String,
    pub therapy_text: String,
    #[serde(default)]
    pub avatar_scores: Vec<u8>,
    #[serde(default)]
    pub median_score: f64,
    #[serde(default)]
    pub score_std: f64,
    #[serde(default)]
    pub stratum: Stratum,
    /// Known quality for synthetic items; mock avatars score around it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_quality: Option<f64>,
}

impl EvalItem {
    pub fn new(item_id: impl Into<String>, case_text: impl Into<String>, therapy_text: impl Into<String>) -> Self {
        EvalItem {
            item_id: item_id.into(),
            case_text: case_text.into(),
            therapy_text: therapy_text.into(),
            avatar_scores: Vec::new(),
            median_score: 0.0,
            score_std: 0.0,
            stratum: Stratum::Low,
            reference_quality: None,
        }
    }
}

/// Tertile cut points on the score standard deviation: an item is `low`
/// when `std <= cuts[0]`, `medium` when `std <= cuts[1]`, else `high`.
pub type CutPoints = [f64; 2];

/// Assigns strata by std tertiles, ties going to the lower stratum.
///
/// With at least three distinct std values the cuts are nudged so that no
/// stratum is empty. Fewer than three items form a single `low` stratum.
pub fn stratify(items: &mut [EvalItem]) -> CutPoints {
    let mut stds: Vec<f64> = items.iter().map(|i| i.score_std).collect();
    stds.sort_by(f64::total_cmp);
    let n = stds.len();
    let cuts = if n < 3 {
        if n > 0 {
            tracing::warn!(items = n, "fewer than three items; using a single stratum");
        }
        [f64::INFINITY, f64::INFINITY]
    } else {
        let mut q1 = stds[n.div_ceil(3) - 1];
        let mut q2 = stds[(2 * n).div_ceil(3) - 1];
        let mut distinct = stds.clone();
        distinct.dedup();
        let d = distinct.len();
        if d >= 3 {
            q1 = q1.min(distinct[d - 3]);
            let next = distinct.iter().copied().find(|&v| v > q1).unwrap_or(q1);
            q2 = q2.max(next).min(distinct[d - 2]);
        }
        [q1, q2]
    };
    for item in items.iter_mut() {
        item.stratum = stratum_of(item.score_std, &cuts);
    }
    cuts
}

pub fn stratum_of(std: f64, cuts: &CutPoints) -> Stratum {
    if std <= cuts[0] {
        Stratum::Low
    } else if std <= cuts[1] {
        Stratum::Medium
    } else {
        Stratum::High
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn items(stds: &[f64]) -> Vec<EvalItem> {
        stds.iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut it = EvalItem::new(format!("i{i}"), "", "");
                it.score_std = s;
                it
            })
            .collect()
    }

    fn strata(v: &[EvalItem]) -> Vec<Stratum> {
        v.iter().map(|i| i.stratum).collect()
    }

    #[test]
    fn examples() {
        let mut v = items(&[0.0, 0.5, 2.0]);
        stratify(&mut v);
        assert_eq!(strata(&v), [Stratum::Low, Stratum::Medium, Stratum::High]);
        let mut v = items(&[0.7; 6]);
        stratify(&mut v);
        assert!(v.iter().all(|i| i.stratum == Stratum::Low));
        let mut v = items(&[1.0, 0.0]);
        stratify(&mut v);
        assert!(v.iter().all(|i| i.stratum == Stratum::Low));
        let mut v = items(&[0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        stratify(&mut v);
        assert_eq!(strata(&v), [Stratum::Low, Stratum::Low, Stratum::Low, Stratum::Low, Stratum::Medium, Stratum::High]);
    }

    #[test]
    fn seeded_sizes_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stds: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..2.0)).collect();
        let mut v = items(&stds);
        stratify(&mut v);
        for s in Stratum::ALL {
            let size = v.iter().filter(|i| i.stratum == s).count() as i64;
            assert!((size - 100).abs() <= 1, "{s}: {size}");
        }
    }

    proptest! {
        #[test]
        fn partition_and_non_empty(stds in prop::collection::vec(prop::sample::select(vec![0.0, 0.4, 0.49, 0.8, 1.2, 2.0]), 3..60)) {
            let mut v = items(&stds);
            let cuts = stratify(&mut v);
            prop_assert!(cuts[0] <= cuts[1]);
            for it in &v {
                prop_assert_eq!(it.stratum, stratum_of(it.score_std, &cuts));
            }
            let mut distinct = stds.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() >= 3 {
                for s in Stratum::ALL {
                    prop_assert!(v.iter().any(|i| i.stratum == s));
                }
            }
            // Ties never straddle a cut.
            for a in &v {
                for b in &v {
                    if a.score_std == b.score_std {
                        prop_assert_eq!(a.stratum, b.stratum);
                    }
                }
            }
        }
    }
}
