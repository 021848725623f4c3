//! YAML pipeline configuration.
//!
//! Every section is optional and falls back to its module defaults; unknown
//! keys are rejected. The effective config is echoed back as YAML and its
//! SHA-256 fingerprint is stamped into every written artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use crate::distill::TeacherConfig;
use crate::embedding::EmbeddingProviderConfig;
use crate::error::{Error, Result};
use crate::evaluate::{default_avatars, AvatarSpec, SessionConfig};
use crate::grpo::GrpoConfig;
use crate::index::{RerankWeights, RetrievalQuery, SearchWeights, DEFAULT_CACHE_CAPACITY};
use crate::rewards::RewardParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSettings {
    pub paths: Vec<PathBuf>,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            paths: Vec::new(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSettings {
    pub top_k: usize,
    pub weights: SearchWeights,
    pub filter_threshold: f64,
    pub cache_capacity: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        let q = RetrievalQuery::new("");
        RetrievalSettings {
            top_k: q.top_k,
            weights: q.weights,
            filter_threshold: q.filter_threshold,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
        }
    }
}

impl RetrievalSettings {
    pub fn query(&self, text: impl Into<String>) -> RetrievalQuery {
        RetrievalQuery::new(text)
            .with_top_k(self.top_k)
            .with_weights(self.weights)
            .with_threshold(self.filter_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSettings {
    pub session: SessionConfig,
    pub avatars: Vec<AvatarSpec>,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            session: SessionConfig::default(),
            avatars: default_avatars(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceSettings {
    pub bind: String,
    /// Root for the index snapshot and session journals.
    pub data_dir: Option<PathBuf>,
    /// When set, requests must carry it in the `x-kral-token` header.
    pub token: Option<String>,
    /// Upper bound on how long a next-item request waits.
    pub long_poll_secs: u64,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            bind: "127.0.0.1:8080".into(),
            data_dir: None,
            token: None,
            long_poll_secs: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub corpus: CorpusSettings,
    pub embedding: EmbeddingProviderConfig,
    pub retrieval: RetrievalSettings,
    pub rerank: RerankWeights,
    pub rewards: RewardParams,
    pub grpo: GrpoConfig,
    pub evaluation: EvaluationSettings,
    pub teacher: TeacherConfig,
    pub service: ServiceSettings,
}

impl PipelineConfig {
    /// Parses YAML, fills defaults and validates. Paths in the error are
    /// reported as `path` with the offending line.
    pub fn from_yaml(text: &str, path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = if text.trim().is_empty() {
            PipelineConfig::default()
        } else {
            serde_yaml::from_str(text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.location().map_or(0, |l| l.line()),
                message: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.chunk_size <= self.corpus.chunk_overlap {
            return Err(Error::InvalidConfig("corpus.chunk_size must exceed corpus.chunk_overlap".into()));
        }
        self.embedding.validate()?;
        self.retrieval.query("").validate()?;
        if self.retrieval.cache_capacity == 0 {
            return Err(Error::InvalidConfig("retrieval.cache_capacity must be >= 1".into()));
        }
        self.rerank.validate()?;
        self.rewards.validate()?;
        self.grpo.validate()?;
        self.evaluation.session.validate()?;
        if self.evaluation.avatars.is_empty() {
            return Err(Error::InvalidConfig("evaluation.avatars must not be empty".into()));
        }
        for a in &self.evaluation.avatars {
            a.validate()?;
        }
        self.teacher.validate()?;
        if self.service.bind.trim().is_empty() {
            return Err(Error::InvalidConfig("service.bind must not be empty".into()));
        }
        Ok(())
    }

    /// The effective configuration as YAML.
    pub fn echo(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form of the effective config.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    PipelineConfig::from_yaml(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::from_yaml(text, Path::new("kral.yaml"))
    }

    #[test]
    fn minimal_config_gets_table_defaults() {
        let cfg = parse("corpus:\n  paths: [guidelines.jsonl]\n").unwrap();
        let echo = cfg.echo();
        for needle in ["chunk_size: 256", "chunk_overlap: 32", "top_k: 3", "dense: 0.4", "sparse: 0.2", "colbert: 0.4", "filter_threshold: 0.3", "cache_capacity: 1000"] {
            assert!(echo.contains(needle), "missing `{needle}` in\n{echo}");
        }
        assert_eq!(cfg.corpus.paths, vec![PathBuf::from("guidelines.jsonl")]);
    }

    #[test]
    fn reward_weights_must_sum_to_one() {
        let err = parse("rewards:\n  hybrid:\n    alpha: 0.6\n    beta_lex: 0.2\n    gamma: 0.4\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::InvalidConfig(_)));
        assert!(msg.contains("alpha") && msg.contains("gamma"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        match parse("corpus:\n  paths: []\n  chunk_sise: 12\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse("surprise: 1\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse("grpo:\n  steps: 50\nservice:\n  bind: 0.0.0.0:9000\n").unwrap();
        let again = parse(&cfg.echo()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.fingerprint(), again.fingerprint());
        assert_ne!(cfg.fingerprint(), PipelineConfig::default().fingerprint());
        assert_eq!(parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn invalid_sections_name_their_field() {
        let err = parse("corpus:\n  chunk_size: 16\n  chunk_overlap: 16\n").unwrap_err();
        assert!(err.to_string().contains("chunk_size"));
        assert!(parse("evaluation:\n  session:\n    review_fraction: 1.5\n").unwrap_err().to_string().contains("review_fraction"));
    }
}
