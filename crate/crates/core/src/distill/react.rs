//! ReAct trajectory capture against the index.

use super::teacher::{ReactState, Teacher};
use super::trajectory::{CaseRecord, Step, Trajectory};
use crate::corpus::Timestamp;
use crate::error::{Error, Result};
use crate::index::{Index, QueryCache, RetrievalQuery, ScoredHit};
use crate::rewards::RewardKernel;

pub const DEFAULT_MAX_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ReactConfig {
    pub max_rounds: usize,
    /// Query settings; the text is replaced by each action's keywords.
    pub query: RetrievalQuery,
}

impl Default for ReactConfig {
    fn default() -> Self {
        ReactConfig {
            max_rounds: DEFAULT_MAX_ROUNDS,
            query: RetrievalQuery::new(""),
        }
    }
}

/// Renders hits as an observation: one whitespace-collapsed chunk per line.
pub fn observation_step(hits: &[ScoredHit]) -> Step {
    let payload = hits
        .iter()
        .map(|h| h.text.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n");
    Step::observation(payload, hits.iter().map(|h| h.chunk_id.clone()).collect())
}

/// Runs one episode: the teacher thinks, optionally acts (keywords go
/// through the cached search), and eventually answers.
///
/// Hitting `max_rounds` without an answer returns the partial trajectory
/// with `valid = false` and zero rewards.
pub fn react_trajectory(
    case: &CaseRecord,
    teacher: &dyn Teacher,
    index: &Index,
    cache: &QueryCache,
    kernel: &RewardKernel,
    cfg: &ReactConfig,
) -> Result<Trajectory> {
    case.validate()?;
    if cfg.max_rounds == 0 {
        return Err(Error::InvalidConfig("max_rounds must be >= 1".into()));
    }
    let now = Timestamp::now();
    let mut traj = Trajectory::new(case.clone());
    for round in 0..cfg.max_rounds {
        let state = ReactState {
            case,
            steps: &traj.steps,
            round,
            max_rounds: cfg.max_rounds,
        };
        let mv = teacher.react_step(&state)?;
        if mv.thought.trim().is_empty() {
            return Err(Error::Teacher(format!("empty thought in round {round}")));
        }
        traj.steps.push(Step::thought(mv.thought));
        if let Some(answer) = mv.answer.filter(|a| !a.trim().is_empty()) {
            traj.answer = answer;
            traj.cited_chunk_ids = mv.cited_chunk_ids;
            kernel.score_trajectory(&mut traj)?;
            return Ok(traj);
        }
        if let Some(keywords) = mv.action.filter(|k| !k.is_empty()) {
            let mut q = cfg.query.clone();
            q.text = keywords.join(" ");
            let (hits, _) = index.cached_search(&q, cache, now)?;
            traj.steps.push(Step::action(&keywords));
            traj.steps.push(observation_step(&hits));
        }
    }
    tracing::debug!(case = %case.case_id, "round limit reached without an answer");
    traj.valid = false;
    Ok(traj)
}
