use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Other,
}

/// A patient case with its supervision targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub age: u32,
    pub sex: Sex,
    pub chief_complaint: String,
    pub history: String,
    pub present_illness: String,
    pub gold_keywords: Vec<String>,
    pub gold_answer: String,
}

impl CaseRecord {
    /// The case as presented to a model (no gold labels).
    pub fn prompt_text(&self) -> String {
        let sex = match self.sex {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Other => "patient",
        };
        format!(
            "{}-year-old {}. Chief complaint: {}. History: {}. Present illness: {}.",
            self.age, sex, self.chief_complaint, self.history, self.present_illness
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.gold_keywords.is_empty() {
            return Err(Error::MissingGold("gold_keywords"));
        }
        if self.gold_answer.trim().is_empty() {
            return Err(Error::MissingGold("gold_answer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Thought,
    Action,
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub payload: String,
    /// Chunks surfaced by an observation step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunk_ids: Vec<String>,
}

impl Step {
    pub fn thought(payload: impl Into<String>) -> Self {
        Step {
            kind: StepKind::Thought,
            payload: payload.into(),
            chunk_ids: Vec::new(),
        }
    }

    pub fn action(keywords: &[String]) -> Self {
        Step {
            kind: StepKind::Action,
            payload: format_action(keywords),
            chunk_ids: Vec::new(),
        }
    }

    pub fn observation(payload: impl Into<String>, chunk_ids: Vec<String>) -> Self {
        Step {
            kind: StepKind::Observation,
            payload: payload.into(),
            chunk_ids,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRewards {
    pub action: f64,
    pub answer: f64,
    pub total: f64,
}

/// One agentic episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub case: CaseRecord,
    pub steps: Vec<Step>,
    pub answer: String,
    #[serde(default)]
    pub cited_chunk_ids: Vec<String>,
    pub gold_keywords: Vec<String>,
    pub gold_answer: String,
    #[serde(default)]
    pub rewards: TrajectoryRewards,
    /// False when the episode hit its round limit before answering.
    pub valid: bool,
}

impl Trajectory {
    pub fn new(case: CaseRecord) -> Self {
        Trajectory {
            gold_keywords: case.gold_keywords.clone(),
            gold_answer: case.gold_answer.clone(),
            case,
            steps: Vec::new(),
            answer: String::new(),
            cited_chunk_ids: Vec::new(),
            rewards: TrajectoryRewards::default(),
            valid: true,
        }
    }

    /// All keywords issued by action steps, in order.
    pub fn action_keywords(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter(|s| s.kind == StepKind::Action)
            .filter_map(|s| parse_action(&s.payload))
            .flatten()
            .collect()
    }

    pub fn count(&self, kind: StepKind) -> usize {
        self.steps.iter().filter(|s| s.kind == kind).count()
    }

    /// Checks the thought/action/observation grammar.
    ///
    /// Every action is followed by exactly one observation, observations only
    /// follow actions, action payloads use the `<action>..</action>` form,
    /// and at least one thought precedes the answer.
    pub fn validate_grammar(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrajectory(m));
        for (i, step) in self.steps.iter().enumerate() {
            let prev = i.checked_sub(1).map(|p| self.steps[p].kind);
            let next = self.steps.get(i + 1).map(|s| s.kind);
            match step.kind {
                StepKind::Action => {
                    if parse_action(&step.payload).is_none() {
                        return bad(format!("step {i}: malformed action payload"));
                    }
                    if next != Some(StepKind::Observation) {
                        return bad(format!("step {i}: action without observation"));
                    }
                }
                StepKind::Observation => {
                    if prev != Some(StepKind::Action) {
                        return bad(format!("step {i}: observation without action"));
                    }
                }
                StepKind::Thought => {}
            }
        }
        if self.count(StepKind::Thought) == 0 {
            return bad("no thought precedes the answer".into());
        }
        Ok(())
    }

    /// Grammar holds and the episode produced an answer.
    pub fn validate(&self) -> Result<()> {
        self.validate_grammar()?;
        if !self.valid || self.answer.trim().is_empty() {
            return Err(Error::InvalidTrajectory("episode has no final answer".into()));
        }
        Ok(())
    }
}

/// Renders keywords in the action wire form `<action>kw1, kw2</action>`.
pub fn format_action(keywords: &[String]) -> String {
    format!("<action>{}</action>", keywords.join(", "))
}

/// Parses the action wire form; `None` if the payload is not an action.
pub fn parse_action(payload: &str) -> Option<Vec<String>> {
    let inner = payload.trim().strip_prefix("<action>")?.strip_suffix("</action>")?;
    Some(
        inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
    )
}
