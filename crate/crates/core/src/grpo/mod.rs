//! Group-relative policy optimisation on a toy retrieve-then-answer task.
//!
//! The student is a linear softmax policy small enough that the surrogate
//! objective and its gradient can be checked exactly. Episodes are scored by
//! the shared reward kernel.

mod ablation;
mod env;
mod objective;
mod policy;
mod train;

pub use ablation::{ablate, AblationArm, AblationFactor, AblationReport, ABLATION_SEEDS};
pub use env::{make_env, Env, MAX_CASES, STOP};
pub use objective::{clip_term, group_advantages, surrogate_loss, GroupBatch, LossParts, ObjectiveParams, Rollout, TokenRecord, ADVANTAGE_EPS};
pub use policy::{log_softmax, Features, Head, HeadKind, ToyPolicy};
pub use train::{ema_smooth, rollout, train, train_from, train_observed, GrpoConfig, LearningCurve, Optimizer, TrainOutcome, DEFAULT_EMA_BETA};
