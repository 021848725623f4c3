//! Driving a session to termination with a source of human scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::item::EvalItem;
use super::session::EvalSession;
use super::stats::likert_round;
use crate::error::{Error, Result};

/// Supplies human scores. `None` means no answer arrived in time.
pub trait HumanSource {
    fn reviewers(&self) -> Vec<String>;
    fn score(&mut self, reviewer: &str, item: &EvalItem, round: u32) -> Result<Option<u8>>;
}

/// Simulated humans who repeat the rounded avatar median.
#[derive(Debug, Clone)]
pub struct EchoHumans {
    pub reviewers: Vec<String>,
}

impl EchoHumans {
    pub fn new(n: usize) -> Self {
        EchoHumans {
            reviewers: (1..=n).map(|i| format!("echo-{i}")).collect(),
        }
    }
}

impl HumanSource for EchoHumans {
    fn reviewers(&self) -> Vec<String> {
        self.reviewers.clone()
    }

    fn score(&mut self, _reviewer: &str, item: &EvalItem, _round: u32) -> Result<Option<u8>> {
        Ok(Some(likert_round(item.median_score)))
    }
}

/// Simulated humans who score uniformly at random.
#[derive(Debug, Clone)]
pub struct RandomHumans {
    pub reviewers: Vec<String>,
    rng: ChaCha8Rng,
}

impl RandomHumans {
    pub fn new(n: usize, seed: u64) -> Self {
        RandomHumans {
            reviewers: (1..=n).map(|i| format!("random-{i}")).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl HumanSource for RandomHumans {
    fn reviewers(&self) -> Vec<String> {
        self.reviewers.clone()
    }

    fn score(&mut self, _reviewer: &str, _item: &EvalItem, _round: u32) -> Result<Option<u8>> {
        Ok(Some(self.rng.gen_range(1..=5)))
    }
}

/// Collects scores until the session terminates or the source times out,
/// in which case the session is left awaiting humans and can be resumed.
pub fn run_protocol(session: &mut EvalSession, humans: &mut dyn HumanSource) -> Result<()> {
    let reviewers = humans.reviewers();
    while !session.is_terminated() {
        let mut progressed = false;
        for reviewer in &reviewers {
            while let Some(p) = session.next_for(reviewer) {
                match humans.score(reviewer, &p.item, p.round)? {
                    Some(score) => {
                        session.submit(&p.item.item_id, reviewer, score)?;
                        progressed = true;
                    }
                    None => return Ok(()),
                }
            }
        }
        if !progressed {
            return Err(Error::Protocol(format!(
                "{} reviewer(s) cannot complete rounds needing {} review(s) per item",
                reviewers.len(),
                session.config.reviewers_per_item
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::avatar::{default_avatars, score_items};
    use crate::evaluate::session::{SessionConfig, SessionStatus, MAX_ROUNDS};

    fn items(n: usize, seed: u64) -> Vec<EvalItem> {
        let mut v: Vec<EvalItem> = (0..n).map(|i| EvalItem::new(format!("i{i}"), format!("case {i}"), format!("plan {i}"))).collect();
        score_items(&mut v, &default_avatars(seed), None).unwrap();
        v
    }

    #[test]
    fn echo_terminates_in_round_one() {
        let mut s = EvalSession::create("e", items(90, 1), SessionConfig::default()).unwrap();
        run_protocol(&mut s, &mut EchoHumans::new(1)).unwrap();
        assert_eq!(s.status, SessionStatus::TerminatedPass);
        assert_eq!(s.round, 1);
        assert!(s.kappa_by_stratum.values().all(|k| *k == 1.0));
    }

    #[test]
    fn random_reaches_round_cap() {
        let mut s = EvalSession::create("r", items(300, 2), SessionConfig::default()).unwrap();
        run_protocol(&mut s, &mut RandomHumans::new(1, 9)).unwrap();
        assert_eq!(s.status, SessionStatus::TerminatedMaxrounds);
        assert_eq!(s.round, MAX_ROUNDS);
    }

    #[test]
    fn too_few_reviewers_is_an_error() {
        let cfg = SessionConfig {
            reviewers_per_item: 3,
            ..Default::default()
        };
        let mut s = EvalSession::create("x", items(30, 3), cfg).unwrap();
        assert!(matches!(run_protocol(&mut s, &mut EchoHumans::new(2)), Err(Error::Protocol(_))));
    }

    struct Silent;

    impl HumanSource for Silent {
        fn reviewers(&self) -> Vec<String> {
            vec!["s".into()]
        }

        fn score(&mut self, _: &str, _: &EvalItem, _: u32) -> Result<Option<u8>> {
            Ok(None)
        }
    }

    #[test]
    fn timeout_parks_the_session() {
        let mut s = EvalSession::create("t", items(30, 4), SessionConfig::default()).unwrap();
        run_protocol(&mut s, &mut Silent).unwrap();
        assert_eq!(s.status, SessionStatus::AwaitingHuman);
        run_protocol(&mut s, &mut EchoHumans::new(1)).unwrap();
        assert_eq!(s.status, SessionStatus::TerminatedPass);
    }
}
