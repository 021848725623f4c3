//! Teacher providers: a deterministic rule-based mock and a remote client.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Debug;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::trajectory::{format_action, parse_action, CaseRecord, Step, StepKind};
use crate::corpus::{split_sentences, tokenize};
use crate::error::{Error, Result};
use crate::hashing::{fnv1a, splitmix64};
use crate::lexical::lexical_score;
use crate::remote::JsonClient;
use crate::rewards::{FunctionWordTagger, PosClass, PosTagger};

/// Wraps prompt scaffolding we insert ourselves so it can be stripped later.
pub const SCAFFOLD_OPEN: &str = "[[scaffold]]";
pub const SCAFFOLD_CLOSE: &str = "[[/scaffold]]";

pub fn scaffold(text: &str) -> String {
    format!("{SCAFFOLD_OPEN}{text}{SCAFFOLD_CLOSE}")
}

/// A generated question with its grounded answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQa {
    pub question: String,
    pub answer: String,
    pub reasoning: String,
}

/// One teacher turn in a ReAct episode: a thought plus either an action or
/// a final answer (or neither, to keep thinking).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReactMove {
    pub thought: String,
    pub action: Option<Vec<String>>,
    pub answer: Option<String>,
    #[serde(default)]
    pub cited_chunk_ids: Vec<String>,
}

/// What the teacher sees at each ReAct round.
#[derive(Debug, Clone, Copy)]
pub struct ReactState<'a> {
    pub case: &'a CaseRecord,
    pub steps: &'a [Step],
    pub round: usize,
    pub max_rounds: usize,
}

impl ReactState<'_> {
    /// Observation steps so far, newest last.
    pub fn observations(&self) -> impl Iterator<Item = &Step> {
        self.steps.iter().filter(|s| s.kind == StepKind::Observation)
    }

    /// Plain-text transcript used as the remote teacher's context.
    pub fn transcript(&self) -> String {
        let mut s = self.case.prompt_text();
        for step in self.steps {
            let tag = match step.kind {
                StepKind::Thought => "Thought",
                StepKind::Action => "Action",
                StepKind::Observation => "Observation",
            };
            s.push_str(&format!("\n{tag}: {}", step.payload));
        }
        s
    }
}

pub trait Teacher: Send + Sync + Debug {
    /// A question answered by `chunk_text`. `attempt` counts retries.
    fn generate_qa(&self, chunk_text: &str, attempt: u32) -> Result<GeneratedQa>;
    /// Up to `n` paraphrases of the prompt's seed question.
    fn paraphrase(&self, prompt: &FewShotPrompt, n: usize) -> Result<Vec<String>>;
    fn react_step(&self, state: &ReactState<'_>) -> Result<ReactMove>;
    /// Compresses `chunks` toward `focus` within `budget` tokens.
    fn compress(&self, chunks: &[String], focus: &str, budget: usize) -> Result<String>;
}

/// Seed question plus exemplar pairs, rendered for a teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotPrompt {
    pub exemplars: Vec<(String, String)>,
    pub question: String,
    pub answer: String,
}

impl FewShotPrompt {
    pub fn render(&self) -> String {
        let mut s = scaffold("Rewrite the final question in different words. Keep its meaning and answer.");
        for (q, a) in &self.exemplars {
            s.push_str(&format!("\nQ: {q}\nA: {a}"));
        }
        s.push_str(&format!("\nQ: {}\nA: {}", self.question, self.answer));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockBehaviour {
    /// Answers in the first round without retrieving.
    AnswerImmediately,
    /// Retrieves with the case's gold keywords, then answers with the gold answer.
    RetrieveGold,
    /// Derives keywords from the case text and answers extractively.
    #[default]
    Heuristic,
    /// Keeps retrieving and never answers.
    NeverAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub kind: TeacherKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Sampling-temperature analogue; the mock uses it to vary templates.
    pub diversity: f64,
    pub seed: u64,
    pub behaviour: MockBehaviour,
    pub timeout_secs: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            kind: TeacherKind::Mock,
            endpoint: None,
            diversity: 0.7,
            seed: 0,
            behaviour: MockBehaviour::Heuristic,
            timeout_secs: 60,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.diversity >= 0.0) {
            return Err(Error::InvalidConfig("teacher.diversity must be >= 0".into()));
        }
        if self.kind == TeacherKind::Remote && self.endpoint.is_none() {
            return Err(Error::InvalidConfig("remote teacher requires an endpoint".into()));
        }
        Ok(())
    }
}

pub fn teacher_from_config(cfg: &TeacherConfig) -> Result<Arc<dyn Teacher>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        TeacherKind::Mock => Arc::new(MockTeacher::new(cfg.seed, cfg.diversity, cfg.behaviour)),
        TeacherKind::Remote => Arc::new(RemoteTeacher::new(cfg)?),
    })
}

const QUESTION_TEMPLATES: &[&str] = &[
    "What is the recommended regimen for {}?",
    "What are the dosing recommendations for {}?",
    "What is the preferred treatment for {}?",
];

const SYNONYMS: &[(&str, &str)] = &[
    ("recommended", "advised"),
    ("regimen", "protocol"),
    ("treatment", "therapy"),
    ("preferred", "first-line"),
    ("dosing", "dose"),
    ("recommendations", "guidance"),
    ("patients", "cases"),
];

const PREFIXES: &[&str] = &["According to the guideline, ", "In clinical practice, ", "Briefly, "];

/// Deterministic, rule-based teacher.
#[derive(Debug, Clone)]
pub struct MockTeacher {
    seed: u64,
    diversity: f64,
    behaviour: MockBehaviour,
    tagger: FunctionWordTagger,
}

impl MockTeacher {
    pub fn new(seed: u64, diversity: f64, behaviour: MockBehaviour) -> Self {
        MockTeacher {
            seed,
            diversity,
            behaviour,
            tagger: FunctionWordTagger,
        }
    }

    pub fn behaviour(&self) -> MockBehaviour {
        self.behaviour
    }

    fn pick(&self, salt: &str, n: usize) -> usize {
        if n == 0 || self.diversity == 0.0 {
            return 0;
        }
        (splitmix64(fnv1a(salt.as_bytes()) ^ self.seed) % n as u64) as usize
    }

    fn content_words(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| t.chars().any(char::is_alphabetic) && t.chars().count() > 2)
            .filter(|t| self.tagger.tag(t) == PosClass::Content)
            .collect()
    }

    fn is_dose_sentence(&self, sentence: &str) -> bool {
        tokenize(sentence).iter().any(|t| self.tagger.tag(t) == PosClass::Therapeutic)
    }

    /// Up to `k` most frequent content words, ties by first appearance.
    fn key_terms(&self, text: &str, k: usize, exclude: &HashSet<String>) -> Vec<String> {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (i, w) in self.content_words(text).into_iter().enumerate() {
            if exclude.contains(&w) {
                continue;
            }
            let e = counts.entry(w).or_insert((0, i));
            e.0 += 1;
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let mut top: Vec<(String, usize)> = ranked.into_iter().take(k).map(|(w, (_, first))| (w, first)).collect();
        top.sort_by_key(|(_, first)| *first);
        top.into_iter().map(|(w, _)| w).collect()
    }

    fn heuristic_move(&self, state: &ReactState<'_>) -> ReactMove {
        let case = state.case;
        let observations: Vec<&Step> = state.observations().collect();
        let retrieved_any = observations.iter().any(|o| !o.chunk_ids.is_empty());
        if !observations.is_empty() && (retrieved_any || state.round + 1 >= state.max_rounds) {
            let texts: Vec<String> = observations.iter().map(|o| o.payload.clone()).collect();
            let focus = format!("{} {}", case.chief_complaint, case.history);
            let best = extractive_compress(&texts, &focus, usize::MAX / 2, 1);
            // Observation payloads hold one retrieved chunk per line.
            let cited: Vec<String> = observations
                .iter()
                .flat_map(|o| o.payload.lines().zip(&o.chunk_ids))
                .filter(|(line, _)| !best.is_empty() && line.contains(best.trim()))
                .map(|(_, id)| id.clone())
                .take(1)
                .collect();
            let answer = if best.trim().is_empty() {
                format!("Supportive care for {}.", case.chief_complaint)
            } else {
                best
            };
            return ReactMove {
                thought: format!("{}The retrieved evidence addresses {}.", scaffold("Decide whether to answer."), case.chief_complaint),
                answer: Some(answer),
                cited_chunk_ids: cited,
                ..Default::default()
            };
        }
        let source = if observations.is_empty() {
            format!("{} {}", case.chief_complaint, case.history)
        } else {
            case.present_illness.clone()
        };
        let mut keywords = self.key_terms(&source, 3, &HashSet::new());
        if keywords.is_empty() {
            keywords = self.key_terms(&case.prompt_text(), 3, &HashSet::new());
        }
        ReactMove {
            thought: format!(
                "{}Look up guidance on {}.",
                scaffold("Think step by step, then act."),
                keywords.join(" and ")
            ),
            action: Some(keywords),
            ..Default::default()
        }
    }
}

impl Teacher for MockTeacher {
    fn generate_qa(&self, chunk_text: &str, attempt: u32) -> Result<GeneratedQa> {
        let sentences = split_sentences(chunk_text);
        let dose: Vec<&str> = sentences.iter().copied().filter(|s| self.is_dose_sentence(s)).collect();
        let answer_sentences: Vec<&str> = if dose.is_empty() {
            sentences.iter().copied().take(1).collect()
        } else {
            dose
        };
        let answer = answer_sentences.join(" ");
        let rest: String = sentences
            .iter()
            .filter(|s| !answer_sentences.contains(s))
            .copied()
            .collect::<Vec<_>>()
            .join(" ");
        let topic_source = if rest.trim().is_empty() { chunk_text.to_string() } else { rest };
        let topic = self.key_terms(&topic_source, 3, &HashSet::new());
        if topic.is_empty() || answer.is_empty() {
            return Ok(GeneratedQa {
                question: String::new(),
                answer,
                reasoning: String::new(),
            });
        }
        let topic = topic.join(" ");
        let template = QUESTION_TEMPLATES[self.pick(&format!("{chunk_text}/{attempt}"), QUESTION_TEMPLATES.len())];
        Ok(GeneratedQa {
            question: template.replace("{}", &topic),
            reasoning: format!("The passage on {topic} gives the regimen directly: {answer}"),
            answer,
        })
    }

    fn paraphrase(&self, prompt: &FewShotPrompt, n: usize) -> Result<Vec<String>> {
        let original = prompt.question.trim();
        let mut candidates: Vec<String> = Vec::new();
        let mut substituted = original.to_string();
        for (from, to) in SYNONYMS {
            if substituted.contains(from) {
                substituted = substituted.replacen(from, to, 1);
                candidates.push(substituted.clone());
            }
        }
        // Clause reordering: "What is X for Y?" -> "For Y, what is X?"
        for base in [original.to_string(), substituted.clone()] {
            let stem = base.trim_end_matches('?');
            if let Some(at) = stem.rfind(" for ") {
                let (head, tail) = stem.split_at(at);
                let mut lead = head.to_string();
                if let Some(first) = lead.get(0..1) {
                    lead.replace_range(0..1, &first.to_lowercase());
                }
                candidates.push(format!("For {}, {}?", &tail[5..], lead));
            }
        }
        for p in PREFIXES {
            let mut lowered = original.to_string();
            if let Some(first) = lowered.get(0..1) {
                lowered.replace_range(0..1, &first.to_lowercase());
            }
            candidates.push(format!("{p}{lowered}"));
        }
        let start = self.pick(original, candidates.len());
        candidates.rotate_left(start);
        let mut seen = HashSet::from([original.to_string()]);
        Ok(candidates.into_iter().filter(|c| seen.insert(c.clone())).take(n).collect())
    }

    fn react_step(&self, state: &ReactState<'_>) -> Result<ReactMove> {
        let case = state.case;
        Ok(match self.behaviour {
            MockBehaviour::AnswerImmediately => ReactMove {
                thought: format!("The presentation suggests {}.", case.chief_complaint),
                answer: Some(format!("Empiric therapy for {}.", case.chief_complaint)),
                ..Default::default()
            },
            MockBehaviour::RetrieveGold => {
                if state.observations().next().is_none() {
                    ReactMove {
                        thought: format!("{}Retrieve the guideline for this case.", scaffold("Think step by step, then act.")),
                        action: Some(case.gold_keywords.clone()),
                        ..Default::default()
                    }
                } else {
                    let cited = state.observations().flat_map(|o| o.chunk_ids.iter().take(1).cloned()).collect();
                    ReactMove {
                        thought: "The retrieved guideline covers this case.".into(),
                        answer: Some(case.gold_answer.clone()),
                        cited_chunk_ids: cited,
                        ..Default::default()
                    }
                }
            }
            MockBehaviour::Heuristic => self.heuristic_move(state),
            MockBehaviour::NeverAnswer => ReactMove {
                thought: "More evidence is needed.".into(),
                action: Some(vec![case.chief_complaint.clone()]),
                ..Default::default()
            },
        })
    }

    fn compress(&self, chunks: &[String], focus: &str, budget: usize) -> Result<String> {
        Ok(extractive_compress(chunks, focus, budget, usize::MAX))
    }
}

/// Extractive compression: keeps the sentences most lexically similar to
/// `focus` that fit in `budget` tokens (at most `max_sentences`), in their
/// original order. Input that already fits is returned joined by newlines.
pub fn extractive_compress(chunks: &[String], focus: &str, budget: usize, max_sentences: usize) -> String {
    let total: usize = chunks.iter().map(|c| tokenize(c).len()).sum();
    if total <= budget && max_sentences == usize::MAX {
        return chunks.join("\n");
    }
    let sentences: Vec<&str> = chunks.iter().flat_map(|c| split_sentences(c)).collect();
    let mut ranked: Vec<(usize, f64)> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| (i, lexical_score(s, focus)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut used = 0;
    let mut keep = Vec::new();
    for (i, _) in ranked {
        if keep.len() >= max_sentences {
            break;
        }
        let len = tokenize(sentences[i]).len();
        if used + len <= budget {
            used += len;
            keep.push(i);
        }
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| sentences[i]).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherMode {
    Qa,
    Augment,
    React,
    Compress,
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRequest {
    pub mode: TeacherMode,
    pub context: String,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherStep {
    pub kind: String,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunk_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub text: String,
    #[serde(default)]
    pub steps: Option<Vec<TeacherStep>>,
}

impl TeacherResponse {
    fn step(&self, kind: &str) -> Option<&TeacherStep> {
        self.steps.as_ref()?.iter().find(|s| s.kind == kind)
    }
}

/// Client for the teacher wire protocol; also used by remote avatar scoring.
#[derive(Debug, Clone)]
pub struct RemoteTeacher {
    client: JsonClient,
    diversity: f64,
    seed: u64,
}

impl RemoteTeacher {
    pub fn new(cfg: &TeacherConfig) -> Result<Self> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| Error::InvalidConfig("remote teacher requires an endpoint".into()))?;
        Ok(RemoteTeacher {
            client: JsonClient::new(endpoint, Duration::from_secs(cfg.timeout_secs.max(1))),
            diversity: cfg.diversity,
            seed: cfg.seed,
        })
    }

    pub fn call(&self, mode: TeacherMode, context: String, mut params: serde_json::Value) -> Result<TeacherResponse> {
        if let Some(obj) = params.as_object_mut() {
            obj.insert("diversity".into(), json!(self.diversity));
            obj.insert("seed".into(), json!(self.seed));
        }
        self.client.post(&TeacherRequest { mode, context, params })
    }
}

impl Teacher for RemoteTeacher {
    fn generate_qa(&self, chunk_text: &str, attempt: u32) -> Result<GeneratedQa> {
        let r = self.call(TeacherMode::Qa, chunk_text.to_string(), json!({ "attempt": attempt }))?;
        let answer = r
            .step("answer")
            .map(|s| s.payload.clone())
            .ok_or_else(|| Error::RemoteMalformed("qa response lacks an answer step".into()))?;
        Ok(GeneratedQa {
            question: r.text.clone(),
            reasoning: r.step("reasoning").map(|s| s.payload.clone()).unwrap_or_default(),
            answer,
        })
    }

    fn paraphrase(&self, prompt: &FewShotPrompt, n: usize) -> Result<Vec<String>> {
        let r = self.call(TeacherMode::Augment, prompt.render(), json!({ "n": n }))?;
        let out = match &r.steps {
            Some(steps) => steps.iter().map(|s| s.payload.trim().to_string()).collect(),
            None => r.text.lines().map(|l| l.trim().to_string()).collect::<Vec<_>>(),
        };
        Ok(out.into_iter().filter(|q| !q.is_empty()).collect())
    }

    fn react_step(&self, state: &ReactState<'_>) -> Result<ReactMove> {
        let r = self.call(
            TeacherMode::React,
            state.transcript(),
            json!({ "round": state.round, "max_rounds": state.max_rounds }),
        )?;
        let thought = r.step("thought").map(|s| s.payload.clone()).unwrap_or_else(|| r.text.clone());
        let action = match r.step("action") {
            Some(s) => Some(parse_action(&s.payload).unwrap_or_else(|| {
                parse_action(&format_action(&[s.payload.clone()])).unwrap_or_default()
            })),
            None => None,
        };
        let (answer, cited) = match r.step("answer") {
            Some(s) => (Some(s.payload.clone()), s.chunk_ids.clone()),
            None => (None, Vec::new()),
        };
        Ok(ReactMove {
            thought,
            action,
            answer,
            cited_chunk_ids: cited,
        })
    }

    fn compress(&self, chunks: &[String], focus: &str, budget: usize) -> Result<String> {
        let r = self.call(TeacherMode::Compress, chunks.join("\n"), json!({ "focus": focus, "budget": budget }))?;
        Ok(r.text)
    }
}
