//! Teacher-driven data distillation: answer-to-question pairs, query
//! augmentation, ReAct trajectories and their clean-up.

mod dataset;
mod preprocess;
mod qa;
mod react;
pub mod teacher;
mod trajectory;

pub use dataset::{read_jsonl, write_jsonl};
pub use preprocess::{compress_knowledge, preprocess_trajectory, strip_scaffold, PreprocessConfig, DEFAULT_OBSERVATION_BUDGET};
pub use qa::{
    answer_to_question, augment_queries, exemplars, is_grounded, screen_pairs, Augmentation, Groundedness, Origin,
    PairFilter, QAPair, DEFAULT_AUGMENTATION, DEFAULT_GROUNDEDNESS, GENERATION_ATTEMPTS,
};
pub use react::{observation_step, react_trajectory, ReactConfig, DEFAULT_MAX_ROUNDS};
pub use teacher::{teacher_from_config, MockBehaviour, MockTeacher, RemoteTeacher, Teacher, TeacherConfig, TeacherKind, TeacherMode, TeacherRequest, TeacherResponse, TeacherStep};
pub use trajectory::{format_action, parse_action, CaseRecord, Sex, Step, StepKind, Trajectory, TrajectoryRewards};
