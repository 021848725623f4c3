//! Answer-to-question generation, query augmentation and seed screening.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::teacher::{FewShotPrompt, Teacher};
use crate::corpus::{split_sentences, tokenize, ChunkRecord};
use crate::error::{Error, Result};
use crate::lexical::lexical_score;

/// Attempts made before an empty generation becomes an error.
pub const GENERATION_ATTEMPTS: u32 = 3;
pub const DEFAULT_AUGMENTATION: usize = 5;
/// Minimum sentence-to-source lexical score for an answer to count as grounded.
pub const DEFAULT_GROUNDEDNESS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    ReverseGenerated,
    CdssSeed,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default)]
    pub source_chunk_ids: Vec<String>,
    pub origin: Origin,
}

impl QAPair {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() || self.answer.trim().is_empty() {
            return Err(Error::Precondition("question and answer must be non-empty".into()));
        }
        Ok(())
    }
}

/// Generates a question whose answer is grounded in `chunk`.
///
/// Empty generations are retried; after [`GENERATION_ATTEMPTS`] the call fails.
pub fn answer_to_question(chunk: &ChunkRecord, teacher: &dyn Teacher) -> Result<QAPair> {
    if tokenize(&chunk.text).is_empty() {
        return Err(Error::Precondition(format!("chunk `{}` has no text", chunk.chunk_id)));
    }
    for attempt in 0..GENERATION_ATTEMPTS {
        let qa = teacher.generate_qa(&chunk.text, attempt)?;
        if qa.question.trim().is_empty() || qa.answer.trim().is_empty() {
            tracing::debug!(chunk = %chunk.chunk_id, attempt, "empty generation");
            continue;
        }
        return Ok(QAPair {
            question: qa.question.trim().to_string(),
            answer: qa.answer.trim().to_string(),
            reasoning: qa.reasoning,
            source_chunk_ids: vec![chunk.chunk_id.clone()],
            origin: Origin::ReverseGenerated,
        });
    }
    Err(Error::Teacher(format!(
        "empty generation for chunk `{}` after {GENERATION_ATTEMPTS} attempts",
        chunk.chunk_id
    )))
}

/// Fixed exemplars shown to the teacher when paraphrasing.
pub fn exemplars() -> Vec<(String, String)> {
    [
        (
            "What is the recommended prophylaxis for hernia repair with mesh?",
            "A single intravenous dose of cefazolin 1-2g 30 minutes before incision.",
        ),
        (
            "Which empiric therapy is advised for community-acquired pneumonia in adults?",
            "Amoxicillin 1g three times daily, or doxycycline 100mg twice daily.",
        ),
        (
            "How should vancomycin be dosed in renal impairment?",
            "Give a loading dose, then adjust maintenance by trough levels and creatinine clearance.",
        ),
    ]
    .into_iter()
    .map(|(q, a)| (q.to_string(), a.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Augmentation {
    pub pairs: Vec<QAPair>,
    pub requested: usize,
    /// Paraphrases requested but not produced (after de-duplication).
    pub shortfall: usize,
}

/// Up to `n` paraphrased questions sharing the seed's answer verbatim.
pub fn augment_queries(seed: &QAPair, n: usize, teacher: &dyn Teacher) -> Result<Augmentation> {
    if n == 0 {
        return Err(Error::Precondition("augmentation count must be >= 1".into()));
    }
    seed.validate()?;
    let prompt = FewShotPrompt {
        exemplars: exemplars(),
        question: seed.question.clone(),
        answer: seed.answer.clone(),
    };
    let mut seen = HashSet::from([normalize_question(&seed.question)]);
    let pairs: Vec<QAPair> = teacher
        .paraphrase(&prompt, n)?
        .into_iter()
        .filter(|q| !q.trim().is_empty() && seen.insert(normalize_question(q)))
        .take(n)
        .map(|q| QAPair {
            question: q.trim().to_string(),
            answer: seed.answer.clone(),
            reasoning: seed.reasoning.clone(),
            source_chunk_ids: seed.source_chunk_ids.clone(),
            origin: Origin::Augmented,
        })
        .collect();
    if pairs.len() < n {
        tracing::info!(requested = n, produced = pairs.len(), "augmentation shortfall");
    }
    Ok(Augmentation {
        shortfall: n - pairs.len(),
        requested: n,
        pairs,
    })
}

fn normalize_question(q: &str) -> String {
    tokenize(q).join(" ")
}

/// True when some answer sentence overlaps `source` above `threshold`.
pub fn is_grounded(answer: &str, source: &str, threshold: f64) -> bool {
    split_sentences(answer)
        .into_iter()
        .any(|s| lexical_score(s, source) > threshold)
}

/// Screening hook for seed pairs. `source` is the text the pair came from, if known.
pub trait PairFilter {
    fn keep(&self, pair: &QAPair, source: Option<&str>) -> bool;
}

/// Rejects pairs whose answer is not grounded in their source text.
#[derive(Debug, Clone, Copy)]
pub struct Groundedness(pub f64);

impl PairFilter for Groundedness {
    fn keep(&self, pair: &QAPair, source: Option<&str>) -> bool {
        source.map_or(true, |s| is_grounded(&pair.answer, s, self.0))
    }
}

/// Applies the filters, then drops pairs whose normalized question repeats.
pub fn screen_pairs<'a>(
    pairs: impl IntoIterator<Item = (QAPair, Option<&'a str>)>,
    filters: &[&dyn PairFilter],
) -> Vec<QAPair> {
    let mut seen = HashSet::new();
    pairs
        .into_iter()
        .filter(|(p, src)| filters.iter().all(|f| f.keep(p, *src)))
        .filter(|(p, _)| seen.insert(normalize_question(&p.question)))
        .map(|(p, _)| p)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::teacher::{GeneratedQa, MockBehaviour, MockTeacher, ReactMove, ReactState};
    use std::sync::atomic::{AtomicU32, Ordering};

    #[derive(Debug, Default)]
    struct Flaky {
        empty_first: u32,
        calls: AtomicU32,
    }

    impl Teacher for Flaky {
        fn generate_qa(&self, _: &str, _: u32) -> Result<GeneratedQa> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(GeneratedQa {
                question: if n < self.empty_first { String::new() } else { "Q?".into() },
                answer: "A".into(),
                reasoning: String::new(),
            })
        }
        fn paraphrase(&self, _: &FewShotPrompt, _: usize) -> Result<Vec<String>> {
            Ok(vec!["same?".into(), "Same?".into(), "other?".into()])
        }
        fn react_step(&self, _: &ReactState<'_>) -> Result<ReactMove> {
            unreachable!()
        }
        fn compress(&self, _: &[String], _: &str, _: usize) -> Result<String> {
            unreachable!()
        }
    }

    fn chunk(text: &str) -> ChunkRecord {
        ChunkRecord::from_text("g#0", "g", text)
    }

    #[test]
    fn retries_then_fails() {
        let ok = Flaky {
            empty_first: 2,
            ..Default::default()
        };
        assert_eq!(answer_to_question(&chunk("text"), &ok).unwrap().question, "Q?");
        let bad = Flaky {
            empty_first: 3,
            ..Default::default()
        };
        assert!(matches!(answer_to_question(&chunk("text"), &bad), Err(Error::Teacher(_))));
        assert_eq!(bad.calls.load(Ordering::SeqCst), 3);
        assert!(matches!(answer_to_question(&chunk("  "), &ok), Err(Error::Precondition(_))));
    }

    #[test]
    fn augmentation_reports_shortfall() {
        let seed = QAPair {
            question: "original?".into(),
            answer: "A".into(),
            reasoning: String::new(),
            source_chunk_ids: vec![],
            origin: Origin::CdssSeed,
        };
        let out = augment_queries(&seed, 5, &Flaky::default()).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.shortfall, 3);
        assert!(out.pairs.iter().all(|p| p.answer == "A" && p.origin == Origin::Augmented));
        assert!(augment_queries(&seed, 0, &Flaky::default()).is_err());
    }

    #[test]
    fn mock_pipeline_is_grounded() {
        let t = MockTeacher::new(9, 0.7, MockBehaviour::Heuristic);
        let c = chunk("Meropenem 1g IV q8h is advised for hospital-acquired pneumonia. Review cultures at 48 hours.");
        let qa = answer_to_question(&c, &t).unwrap();
        assert!(is_grounded(&qa.answer, &c.text, DEFAULT_GROUNDEDNESS));
        let aug = augment_queries(&qa, 1, &t).unwrap();
        assert_eq!(aug.pairs.len(), 1);
        assert_ne!(aug.pairs[0].question, qa.question);
        assert_eq!(aug.pairs[0].answer, qa.answer);
    }

    #[test]
    fn screening_filters_and_dedups() {
        let pair = |q: &str, a: &str| QAPair {
            question: q.into(),
            answer: a.into(),
            reasoning: String::new(),
            source_chunk_ids: vec![],
            origin: Origin::CdssSeed,
        };
        let kept = screen_pairs(
            vec![
                (pair("Dose?", "cefazolin 2g"), Some("cefazolin 2g before incision")),
                (pair("dose", "cefazolin 2g"), Some("cefazolin 2g before incision")),
                (pair("Other?", "unrelated words"), Some("cefazolin 2g before incision")),
                (pair("Unsourced?", "anything"), None),
            ],
            &[&Groundedness(DEFAULT_GROUNDEDNESS)],
        );
        let qs: Vec<&str> = kept.iter().map(|p| p.question.as_str()).collect();
        assert_eq!(qs, ["Dose?", "Unsourced?"]);
    }
}
