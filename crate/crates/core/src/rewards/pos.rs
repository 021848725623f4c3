//! Word-class tagging for the repetition penalty.

use std::collections::HashSet;
use std::fmt::Debug;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosClass {
    /// Grammatical glue: articles, prepositions, auxiliaries, particles.
    Function,
    /// Everything else.
    Content,
    /// Dose, route and schedule terms whose repetition is legitimate.
    Therapeutic,
}

pub trait PosTagger: Send + Sync + Debug {
    fn tag(&self, token: &str) -> PosClass;
}

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "nor", "of", "to", "in", "on", "at", "by", "for", "from", "with",
    "without", "as", "into", "onto", "is", "are", "was", "were", "be", "been", "being", "am", "do", "does",
    "did", "has", "have", "had", "it", "its", "this", "that", "these", "those", "there", "then", "than", "so",
    "such", "if", "also", "very", "just", "again", "should", "would", "could", "can", "may", "might", "will",
    "shall", "must", "not", "no", "yes", "which", "who", "whom", "what", "when", "where", "while", "after",
    "before", "per", "via", "all", "any", "each", "both", "some", "we", "you", "he", "she", "they", "i",
    "的", "了", "和", "是", "在", "与", "及", "或", "也", "就", "都", "而", "着", "过", "吗", "呢", "吧",
];

const THERAPEUTIC_WORDS: &[&str] = &[
    "qd", "bid", "tid", "qid", "qn", "qod", "prn", "stat", "iv", "ivgtt", "po", "im", "sc", "ih", "daily",
];

/// Rule-based tagger: a closed function-word list, dose/schedule patterns,
/// and everything else as content.
#[derive(Debug, Default, Clone, Copy)]
pub struct FunctionWordTagger;

fn function_words() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| FUNCTION_WORDS.iter().copied().collect())
}

fn dose_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(q\d+(h|d|w)|\d+(\.\d+)?(-\d+(\.\d+)?)?(mg|g|mcg|ug|µg|ml|l|iu|u|mmol|meq|mg/kg|%)?|x\d+)$")
            .expect("valid dose pattern")
    })
}

impl PosTagger for FunctionWordTagger {
    fn tag(&self, token: &str) -> PosClass {
        let t = token.to_lowercase();
        if function_words().contains(t.as_str()) {
            PosClass::Function
        } else if THERAPEUTIC_WORDS.contains(&t.as_str()) || dose_pattern().is_match(&t) {
            PosClass::Therapeutic
        } else {
            PosClass::Content
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags() {
        let t = FunctionWordTagger;
        assert_eq!(t.tag("the"), PosClass::Function);
        assert_eq!(t.tag("q8h"), PosClass::Therapeutic);
        assert_eq!(t.tag("1-2g"), PosClass::Therapeutic);
        assert_eq!(t.tag("500mg"), PosClass::Therapeutic);
        assert_eq!(t.tag("IV"), PosClass::Therapeutic);
        assert_eq!(t.tag("meropenem"), PosClass::Content);
    }
}
