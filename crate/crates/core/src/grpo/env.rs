//! Synthetic retrieve-then-answer environment.
//!
//! Each case is a (condition, modifier) pair. The corpus holds one guideline
//! chunk per pair in a larger grid, so a case's gold regimen is only found by
//! retrieving with both of its keywords. Gold modifier keywords are written
//! in an annotator's surface form (`renal-failure`) that differs from the
//! index vocabulary (`renal`), as real keyword labels do.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{tokenize, ChunkRecord, Timestamp};
use crate::distill::{CaseRecord, Sex};
use crate::embedding::{EmbeddingProviderConfig, LocalProvider};
use crate::error::{Error, Result};
use crate::index::{Index, QueryCache, RerankWeights, RetrievalQuery};

use super::policy::ToyPolicy;

const CONDITIONS: &[(&str, &str)] = &[
    ("pneumonia", "productive cough and fever"),
    ("cellulitis", "spreading redness of the leg"),
    ("pyelonephritis", "flank pain and rigors"),
    ("meningitis", "headache and neck stiffness"),
    ("osteomyelitis", "bone pain over the shin"),
    ("endocarditis", "fever with a new murmur"),
    ("cholangitis", "jaundice and right upper quadrant pain"),
    ("sinusitis", "facial pain and nasal discharge"),
    ("prostatitis", "dysuria and perineal pain"),
    ("peritonitis", "diffuse abdominal pain"),
    ("bacteremia", "fever and hypotension"),
    ("pharyngitis", "sore throat and exudate"),
];

/// (index keyword, annotated gold form, case background).
const MODIFIERS: &[(&str, &str, &str)] = &[
    ("renal", "renal-failure", "chronic kidney disease"),
    ("pregnancy", "pregnant", "second trimester"),
    ("elderly", "elderly-patient", "frailty and falls"),
    ("penicillin-allergy", "penicillin", "anaphylaxis after amoxicillin"),
    ("diabetic", "diabetes", "poor glycaemic control"),
    ("neutropenic", "neutropenia", "recent chemotherapy"),
];

const DRUGS: &[&str] = &[
    "ceftriaxone", "cefazolin", "meropenem", "vancomycin", "levofloxacin", "clindamycin", "aztreonam",
    "gentamicin", "doxycycline", "linezolid",
];
const DOSES: &[&str] = &["250mg", "500mg", "1g", "2g", "600mg", "900mg"];
const SCHEDULES: &[&str] = &["q6h", "q8h", "q12h", "q24h", "bid"];

/// Largest number of cases [`make_env`] can generate.
pub const MAX_CASES: usize = CONDITIONS.len() * MODIFIERS.len();

pub const STOP: &str = "<stop>";

#[derive(Debug)]
pub struct Env {
    pub seed: u64,
    pub cases: Vec<CaseRecord>,
    pub index: Index,
    pub cache: QueryCache,
    /// Retrieval settings; the text is replaced by the action keywords.
    pub query: RetrievalQuery,
    /// Condition and modifier keywords, then the stop token.
    pub keyword_vocab: Vec<String>,
    /// Drugs, doses and schedules, then the stop token.
    pub answer_vocab: Vec<String>,
    /// Distinct words of the case-specific fields, minus words every case shares; sorted.
    pub text_vocab: Vec<String>,
    /// Per case, the ids of its words in `text_vocab`.
    pub case_words: Vec<Vec<usize>>,
    /// Fixed clock, so recency never changes rankings between runs.
    pub now: Timestamp,
}

/// Builds a deterministic environment with `n_cases` cases.
pub fn make_env(seed: u64, n_cases: usize) -> Result<Env> {
    if n_cases == 0 || n_cases > MAX_CASES {
        return Err(Error::InvalidConfig(format!("n_cases must lie in 1..={MAX_CASES}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chunks = Vec::with_capacity(MAX_CASES + CONDITIONS.len());
    let mut regimens = Vec::with_capacity(MAX_CASES);
    for (ci, (condition, _)) in CONDITIONS.iter().enumerate() {
        chunks.push(ChunkRecord::from_text(
            format!("general-{ci}"),
            "guideline",
            format!("General measures for {condition}: obtain cultures before therapy and review at 48 hours."),
        ));
        for (mi, (modifier, gold_form, _)) in MODIFIERS.iter().enumerate() {
            let regimen = format!(
                "{} {} {}",
                DRUGS.choose(&mut rng).unwrap(),
                DOSES.choose(&mut rng).unwrap(),
                SCHEDULES.choose(&mut rng).unwrap()
            );
            chunks.push(ChunkRecord::from_text(
                gold_chunk_id(ci, mi),
                "guideline",
                format!("For {condition} with {modifier} status ({gold_form}), give {regimen}."),
            ));
            regimens.push((ci, mi, regimen));
        }
    }
    regimens.shuffle(&mut rng);
    let cases: Vec<CaseRecord> = regimens
        .into_iter()
        .take(n_cases)
        .enumerate()
        .map(|(k, (ci, mi, regimen))| {
            let (condition, symptoms) = CONDITIONS[ci];
            let (_, gold_form, background) = MODIFIERS[mi];
            CaseRecord {
                case_id: format!("case-{k:03}"),
                age: rng.gen_range(18..90),
                sex: if rng.gen_bool(0.5) { Sex::Female } else { Sex::Male },
                chief_complaint: symptoms.to_string(),
                history: background.to_string(),
                present_illness: format!("working diagnosis {condition}"),
                gold_keywords: vec![condition.to_string(), gold_form.to_string()],
                gold_answer: regimen,
            }
        })
        .collect();

    let provider = Arc::new(LocalProvider::new(EmbeddingProviderConfig::local(0))?);
    let index = Index::new(provider, RerankWeights::default())?;
    index.upsert(chunks)?;

    // Case-specific fields only; words shared by every case carry no signal.
    let case_texts: Vec<BTreeSet<String>> = cases
        .iter()
        .map(|c: &CaseRecord| tokenize(&format!("{} {} {}", c.chief_complaint, c.history, c.present_illness)).into_iter().collect())
        .collect();
    let text_vocab: Vec<String> = case_texts
        .iter()
        .flatten()
        .filter(|w| case_texts.len() == 1 || !case_texts.iter().all(|t| t.contains(*w)))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let case_words = case_texts
        .iter()
        .map(|words| words.iter().filter_map(|w| text_vocab.binary_search(w).ok()).collect())
        .collect();

    let with_stop = |words: Vec<&str>| words.into_iter().map(str::to_string).chain([STOP.to_string()]).collect();
    Ok(Env {
        seed,
        cases,
        index,
        cache: QueryCache::default(),
        query: RetrievalQuery::new(""),
        keyword_vocab: with_stop(
            CONDITIONS
                .iter()
                .map(|(w, _)| *w)
                .chain(MODIFIERS.iter().flat_map(|(w, g, _)| [*w, *g]))
                .collect(),
        ),
        answer_vocab: with_stop(DRUGS.iter().chain(DOSES).chain(SCHEDULES).copied().collect()),
        text_vocab,
        case_words,
        now: Timestamp(0),
    })
}

fn gold_chunk_id(condition: usize, modifier: usize) -> String {
    format!("regimen-{condition}-{modifier}")
}

impl Env {
    /// Id of the chunk holding `case`'s regimen.
    pub fn gold_chunk(&self, case: &CaseRecord) -> Option<String> {
        let ci = CONDITIONS.iter().position(|(c, _)| *c == case.gold_keywords[0])?;
        let mi = MODIFIERS.iter().position(|(_, g, _)| *g == case.gold_keywords[1])?;
        Some(gold_chunk_id(ci, mi))
    }

    /// A zero-initialised policy sized for this environment.
    pub fn initial_policy(&self) -> Result<ToyPolicy> {
        ToyPolicy::new(
            self.case_words.clone(),
            self.text_vocab.len(),
            self.keyword_vocab.clone(),
            self.answer_vocab.clone(),
        )
    }

    pub fn retrieval_query(&self, keywords: &[String]) -> RetrievalQuery {
        let mut q = self.query.clone();
        q.text = keywords.join(" ");
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = make_env(7, 20).unwrap();
        let b = make_env(7, 20).unwrap();
        assert_eq!(serde_json::to_string(&a.cases).unwrap(), serde_json::to_string(&b.cases).unwrap());
        assert_eq!(a.index.chunks(), b.index.chunks());
        assert_ne!(
            serde_json::to_string(&a.cases).unwrap(),
            serde_json::to_string(&make_env(8, 20).unwrap().cases).unwrap()
        );
    }

    #[test]
    fn bounds() {
        assert!(make_env(1, 0).is_err());
        assert!(make_env(1, MAX_CASES + 1).is_err());
        assert_eq!(make_env(1, MAX_CASES).unwrap().cases.len(), MAX_CASES);
    }

    #[test]
    fn gold_keywords_retrieve_gold_chunk_first() {
        for seed in [1, 42] {
            let env = make_env(seed, MAX_CASES).unwrap();
            for case in &env.cases {
                let hits = env.index.search_hybrid(&env.retrieval_query(&case.gold_keywords)).unwrap();
                assert_eq!(Some(hits[0].chunk_id.clone()), env.gold_chunk(case), "{}", case.case_id);
                assert!(hits[0].text.contains(&case.gold_answer));
            }
        }
    }
}
