//! BM25 scoring and the symmetric lexical-overlap score used by rewards.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    /// BM25 term-frequency saturation without length normalization.
    #[inline]
    pub fn saturate(&self, tf: f64) -> f64 {
        if tf <= 0.0 {
            0.0
        } else {
            tf * (self.k1 + 1.0) / (tf + self.k1)
        }
    }
}

/// Document frequencies over a reference set of token bags.
#[derive(Debug, Clone, Default)]
pub struct IdfTable {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl IdfTable {
    pub fn from_docs<'a, I, D>(docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        let mut table = IdfTable::default();
        for doc in docs {
            table.add_doc(doc);
        }
        table
    }

    pub fn add_doc<'a>(&mut self, terms: impl IntoIterator<Item = &'a String>) {
        self.n_docs += 1;
        let unique: BTreeSet<&String> = terms.into_iter().collect();
        for t in unique {
            *self.df.entry(t.clone()).or_insert(0) += 1;
        }
    }

    pub fn remove_doc<'a>(&mut self, terms: impl IntoIterator<Item = &'a String>) {
        self.n_docs = self.n_docs.saturating_sub(1);
        let unique: BTreeSet<&String> = terms.into_iter().collect();
        for t in unique {
            if let Some(c) = self.df.get_mut(t) {
                *c -= 1;
                if *c == 0 {
                    self.df.remove(t);
                }
            }
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Always-positive BM25 idf: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        let n = self.n_docs as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Okapi BM25 of `query_terms` against one document's term frequencies.
pub fn bm25(
    query_terms: &[String],
    doc_tf: &BTreeMap<String, f64>,
    doc_len: f64,
    avg_doc_len: f64,
    idf: &IdfTable,
    params: Bm25Params,
) -> f64 {
    let norm = if avg_doc_len > 0.0 {
        1.0 - params.b + params.b * doc_len / avg_doc_len
    } else {
        1.0
    };
    let unique: BTreeSet<&String> = query_terms.iter().collect();
    unique
        .into_iter()
        .filter_map(|t| doc_tf.get(t).map(|&tf| (t, tf)))
        .map(|(t, tf)| idf.idf(t) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm))
        .sum()
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    m
}

fn directed_overlap(from: &BTreeMap<&str, f64>, to: &BTreeMap<&str, f64>, idf: &IdfTable, p: Bm25Params) -> f64 {
    let mut matched = 0.0;
    let mut total = 0.0;
    for (term, &tf) in from {
        let w = idf.idf(term);
        let own = p.saturate(tf);
        total += w * own;
        matched += w * own.min(p.saturate(to.get(term).copied().unwrap_or(0.0)));
    }
    if total > 0.0 {
        matched / total
    } else {
        0.0
    }
}

/// Symmetric lexical similarity of two token lists in `[0, 1]`.
///
/// Half of the score is an idf-weighted overlap of BM25-saturated term
/// frequencies (averaged over both directions), half is the Jaccard overlap
/// of the unigram sets. Identical token multisets score exactly 1.
pub fn lexical_overlap(a: &[String], b: &[String], idf: &IdfTable, params: Bm25Params) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let ca = term_counts(a);
    let cb = term_counts(b);
    let weighted = 0.5 * (directed_overlap(&ca, &cb, idf, params) + directed_overlap(&cb, &ca, idf, params));
    let inter = ca.keys().filter(|k| cb.contains_key(*k)).count() as f64;
    let union = (ca.len() + cb.len()) as f64 - inter;
    let unigram = inter / union;
    (0.5 * weighted + 0.5 * unigram).clamp(0.0, 1.0)
}

/// [`lexical_overlap`] with document statistics taken from the two texts.
pub fn lexical_score(a: &str, b: &str) -> f64 {
    let ta = tokenize(a);
    let tb = tokenize(b);
    let idf = IdfTable::from_docs([&ta, &tb]);
    lexical_overlap(&ta, &tb, &idf, Bm25Params::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lexical_examples() {
        assert_eq!(lexical_score("meropenem 1g q8h", "meropenem 1g q8h"), 1.0);
        assert_eq!(lexical_score("q8h q8h iv", "iv q8h q8h"), 1.0);
        assert_eq!(lexical_score("meropenem 1g", "vancomycin 2g"), 0.0);
        let mid = lexical_score("meropenem 1g q8h", "meropenem 2g q8h");
        assert!(mid > 0.0 && mid < 1.0, "{mid}");
        assert_eq!(lexical_score("", ""), 0.0);
    }

    #[test]
    fn repeated_terms_are_not_a_full_match() {
        let s = lexical_score("q8h", "q8h q8h");
        assert!(s < 1.0 && s > 0.5, "{s}");
    }

    #[test]
    fn bm25_prefers_matching_docs() {
        let docs: Vec<Vec<String>> = ["cefazolin dose surgery", "vancomycin trough", "cefazolin allergy"]
            .iter()
            .map(|d| tokenize(d))
            .collect();
        let idf = IdfTable::from_docs(&docs);
        let q = tokenize("cefazolin surgery");
        let tf = |d: &[String]| {
            let mut m = BTreeMap::new();
            for t in d {
                *m.entry(t.clone()).or_insert(0.0) += 1.0;
            }
            m
        };
        let s: Vec<f64> = docs.iter().map(|d| bm25(&q, &tf(d), d.len() as f64, 8.0 / 3.0, &idf, Bm25Params::default())).collect();
        assert!(s[0] > s[2] && s[2] > s[1] && s[1] == 0.0);
    }

    #[test]
    fn idf_bookkeeping() {
        let a = tokenize("x y");
        let b = tokenize("y z");
        let mut idf = IdfTable::from_docs([&a, &b]);
        assert!(idf.idf("x") > idf.idf("y"));
        idf.remove_doc(&a);
        assert_eq!(idf.n_docs(), 1);
        assert_eq!(idf.idf("x"), idf.idf("never-seen"));
    }

    proptest! {
        #[test]
        fn lexical_symmetric_and_bounded(a in "[a-d ]{0,20}", b in "[a-d ]{0,20}") {
            let x = lexical_score(&a, &b);
            prop_assert_eq!(x, lexical_score(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
