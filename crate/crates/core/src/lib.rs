//! Knowledge-retrieval-augmented agentic learning toolkit.
//!
//! * [`corpus`]: tokenization and overlapping chunking of guideline text.
//! * [`embedding`]: dense, sparse and per-token embeddings behind a provider trait.
//! * [`index`]: exact hybrid retrieval, hit-heat re-ranking and a result cache.
//! * [`rewards`]: subword Jaccard, hybrid similarity and repetition penalty.
//! * [`distill`]: teacher-driven Q&A generation, augmentation and ReAct trajectories.
//! * [`grpo`]: a toy retrieve-then-answer environment and a group-relative policy trainer.
//! * [`evaluate`]: avatar scoring, stratification and the kappa-gated review protocol.
//! * [`config`] and [`resources`]: YAML pipeline config and the training-cost calculator.

pub mod config;
pub mod corpus;
pub mod distill;
pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod grpo;
pub mod hashing;
pub mod index;
pub mod lexical;
pub mod remote;
pub mod resources;
pub mod rewards;

pub use config::{load_config, PipelineConfig};
pub use error::{Error, ErrorClass, Result};
