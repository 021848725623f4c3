//! Hierarchical evaluation: avatar scoring, discordance strata and the
//! kappa-gated human review protocol.
//!
//! Items are scored by several avatars, aggregated to median and standard
//! deviation, and split into std tertiles. Within each stratum a seeded
//! fraction is re-scored by humans; the stratum passes when human labels
//! agree with the rounded avatar median (kappa above the threshold) or the
//! human mean is tight enough, and is otherwise re-sampled, for at most
//! three rounds.

mod avatar;
mod item;
mod journal;
mod protocol;
mod session;
mod stats;

pub use avatar::{avatar_score, default_avatars, latent_quality, score_items, AvatarKind, AvatarSpec, DEFAULT_AVATAR_COUNT};
pub use item::{stratify, stratum_of, CutPoints, EvalItem, Stratum};
pub use journal::{Journal, SessionStore};
pub use protocol::{run_protocol, EchoHumans, HumanSource, RandomHumans};
pub use session::{
    EvalSession, PendingItem, RoundOutcome, SessionConfig, SessionEvent, SessionStatus, StratumState, StratumStatus, Submission, MAX_ROUNDS,
};
pub use stats::{aggregate, ci_width, cohen_kappa, likert_round, Z_95};
