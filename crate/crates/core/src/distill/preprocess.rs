//! Knowledge compression and trajectory clean-up before fine-tuning.

use std::collections::BTreeSet;

use super::teacher::{extractive_compress, Teacher, SCAFFOLD_CLOSE, SCAFFOLD_OPEN};
use super::trajectory::{StepKind, Trajectory};
use crate::corpus::tokenize;
use crate::error::{Error, Result};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
/// Token budget for each compressed observation.
pub const DEFAULT_OBSERVATION_BUDGET: usize = 64;

/// Compresses retrieved text toward `focus` within `budget` tokens.
pub fn compress_knowledge(chunks: &[String], focus: &str, teacher: &dyn Teacher, budget: usize) -> Result<String> {
    if budget == 0 {
        return Err(Error::Precondition("compression budget must be > 0".into()));
    }
    if chunks.is_empty() {
        return Ok(String::new());
    }
    let out = teacher.compress(chunks, focus, budget)?;
    let used = tokenize(&out).len();
    if used > budget {
        return Err(Error::Teacher(format!("compression used {used} tokens, budget {budget}")));
    }
    Ok(out)
}

/// Removes every `[[scaffold]]...[[/scaffold]]` span and trims.
pub fn strip_scaffold(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(SCAFFOLD_OPEN) {
        out.push_str(&rest[..start]);
        match rest[start..].find(SCAFFOLD_CLOSE) {
            Some(end) => rest = &rest[start + end + SCAFFOLD_CLOSE.len()..],
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim().to_string()
}

fn mark_thought(payload: &str) -> String {
    if payload.starts_with(THINK_OPEN) && payload.ends_with(THINK_CLOSE) {
        payload.to_string()
    } else {
        format!("{THINK_OPEN}{payload}{THINK_CLOSE}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub observation_budget: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            observation_budget: DEFAULT_OBSERVATION_BUDGET,
        }
    }
}

/// Cleans a valid trajectory for fine-tuning:
///
/// 1. scaffold text is stripped from every payload and the answer;
/// 2. thoughts are kept and wrapped in `<think>` tags;
/// 3. each observation is compressed extractively toward the case;
/// 4. an action round whose retrieved chunks are contained in another
///    round's is dropped (its thoughts stay).
///
/// Applying it twice gives the same result as applying it once.
pub fn preprocess_trajectory(t: &Trajectory, cfg: &PreprocessConfig) -> Result<Trajectory> {
    t.validate()?;
    if cfg.observation_budget == 0 {
        return Err(Error::InvalidConfig("observation_budget must be > 0".into()));
    }
    let mut out = t.clone();
    out.answer = strip_scaffold(&out.answer);
    let focus = out.case.prompt_text();
    for step in &mut out.steps {
        match step.kind {
            StepKind::Thought => step.payload = mark_thought(&strip_scaffold(&step.payload)),
            StepKind::Action => step.payload = strip_scaffold(&step.payload),
            StepKind::Observation => {
                let lines: Vec<String> = strip_scaffold(&step.payload).lines().map(str::to_string).collect();
                step.payload = extractive_compress(&lines, &focus, cfg.observation_budget, usize::MAX);
            }
        }
    }

    // Rounds are (action, observation) index pairs; grammar guarantees adjacency.
    let rounds: Vec<(usize, BTreeSet<&String>)> = out
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == StepKind::Action)
        .map(|(i, _)| (i, out.steps[i + 1].chunk_ids.iter().collect()))
        .collect();
    let mut drop = BTreeSet::new();
    for (a, (ia, set_a)) in rounds.iter().enumerate() {
        let covered = rounds.iter().enumerate().any(|(b, (_, set_b))| {
            b != a && set_a.is_subset(set_b) && (set_a.len() < set_b.len() || b < a)
        });
        if covered {
            drop.insert(*ia);
            drop.insert(ia + 1);
        }
    }
    out.steps = out
        .steps
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, s)| s)
        .collect();
    out.validate_grammar()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::teacher::{scaffold, MockBehaviour, MockTeacher};
    use crate::distill::{CaseRecord, Sex, Step};

    fn traj(rounds: &[&[&str]]) -> Trajectory {
        let case = CaseRecord {
            case_id: "c".into(),
            age: 40,
            sex: Sex::Other,
            chief_complaint: "fever".into(),
            history: "none".into(),
            present_illness: "two days".into(),
            gold_keywords: vec!["fever".into()],
            gold_answer: "paracetamol".into(),
        };
        let mut t = Trajectory::new(case);
        t.steps.push(Step::thought(format!("{}start", scaffold("Think."))));
        for (i, ids) in rounds.iter().enumerate() {
            t.steps.push(Step::action(&[format!("kw{i}")]));
            let ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
            t.steps.push(Step::observation(ids.join("\n"), ids));
            t.steps.push(Step::thought(format!("after {i}")));
        }
        t.answer = "paracetamol".into();
        t
    }

    #[test]
    fn no_actions_only_strips() {
        let t = traj(&[]);
        let p = preprocess_trajectory(&t, &PreprocessConfig::default()).unwrap();
        assert_eq!(p.steps.len(), 1);
        assert_eq!(p.steps[0].payload, "<think>start</think>");
    }

    #[test]
    fn superset_round_absorbs_subset() {
        let t = traj(&[&["a"], &["a", "b"]]);
        let p = preprocess_trajectory(&t, &PreprocessConfig::default()).unwrap();
        assert_eq!(p.count(StepKind::Action), 1);
        assert_eq!(p.action_keywords(), ["kw1"]);
        assert_eq!(p.count(StepKind::Thought), t.count(StepKind::Thought));

        let equal = preprocess_trajectory(&traj(&[&["a", "b"], &["b", "a"]]), &PreprocessConfig::default()).unwrap();
        assert_eq!(equal.action_keywords(), ["kw0"]);
        let disjoint = preprocess_trajectory(&traj(&[&["a"], &["b"]]), &PreprocessConfig::default()).unwrap();
        assert_eq!(disjoint.count(StepKind::Action), 2);
    }

    #[test]
    fn idempotent() {
        let t = traj(&[&["a"], &["a", "b"], &["c"]]);
        let once = preprocess_trajectory(&t, &PreprocessConfig::default()).unwrap();
        let twice = preprocess_trajectory(&once, &PreprocessConfig::default()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn invalid_rejected() {
        let mut t = traj(&[]);
        t.answer.clear();
        assert!(preprocess_trajectory(&t, &PreprocessConfig::default()).is_err());
    }

    #[test]
    fn compress_contract() {
        let t = MockTeacher::new(0, 0.7, MockBehaviour::Heuristic);
        assert_eq!(compress_knowledge(&[], "x", &t, 5).unwrap(), "");
        assert!(compress_knowledge(&["a".into()], "x", &t, 0).is_err());
        let chunks = vec!["Fever responds to paracetamol. Rest is advised. Hydrate well.".to_string()];
        assert_eq!(compress_knowledge(&chunks, "fever", &t, 100).unwrap(), chunks[0]);
        assert_eq!(compress_knowledge(&chunks, "fever paracetamol", &t, 4).unwrap(), "Fever responds to paracetamol.");
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_scaffold("[[scaffold]]x[[/scaffold]] y [[scaffold]]z"), "y");
        assert_eq!(strip_scaffold("plain"), "plain");
    }
}
