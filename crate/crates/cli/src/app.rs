//! Pipeline steps shared by the command line and the HTTP service.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use kral_core::corpus::{chunk_document, load_corpus, ChunkRecord};
use kral_core::distill::{RemoteTeacher, TeacherKind};
use kral_core::embedding::provider_from_config;
use kral_core::evaluate::{aggregate, score_items, AvatarKind, EvalItem};
use kral_core::index::Index;
use kral_core::rewards::{RewardKernel, TokenRewardBreakdown};
use kral_core::{Error, PipelineConfig, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_DATA_DIR: &str = "kral-data";
pub const SNAPSHOT_FILE: &str = "index.jsonl";
pub const SESSIONS_DIR: &str = "sessions";

/// Where snapshots and journals live: flag or environment first, then the
/// config, then `./kral-data`.
pub fn resolve_data_dir(flag: Option<&Path>, cfg: &PipelineConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.service.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

pub fn snapshot_path(data_dir: &Path) -> PathBuf {
    data_dir.join(SNAPSHOT_FILE)
}

pub fn sessions_dir(data_dir: &Path) -> PathBuf {
    data_dir.join(SESSIONS_DIR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub chunks: usize,
    pub snapshot: PathBuf,
    pub config_fingerprint: String,
}

/// Chunks every document of the corpus files.
pub fn chunk_corpus(cfg: &PipelineConfig, paths: &[PathBuf]) -> Result<(usize, Vec<ChunkRecord>)> {
    if paths.is_empty() {
        return Err(Error::InvalidConfig("no corpus paths: set corpus.paths or pass --corpus".into()));
    }
    let mut documents = 0;
    let mut chunks = Vec::new();
    for path in paths {
        let docs = load_corpus(path)?;
        documents += docs.len();
        for doc in &docs {
            chunks.extend(chunk_document(doc, cfg.corpus.chunk_size, cfg.corpus.chunk_overlap)?);
        }
    }
    Ok((documents, chunks))
}

pub fn empty_index(cfg: &PipelineConfig) -> Result<Index> {
    Index::new(provider_from_config(&cfg.embedding)?, cfg.rerank.clone())
}

/// Builds a fresh index from the corpus and writes a stamped snapshot.
pub fn ingest(cfg: &PipelineConfig, paths: &[PathBuf], snapshot: &Path) -> Result<IngestSummary> {
    let (documents, chunks) = chunk_corpus(cfg, paths)?;
    let index = empty_index(cfg)?;
    let n = index.upsert(chunks)?;
    if let Some(parent) = snapshot.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let fingerprint = cfg.fingerprint();
    index.save_snapshot_stamped(snapshot, Some(&fingerprint))?;
    Ok(IngestSummary {
        documents,
        chunks: n,
        snapshot: snapshot.to_path_buf(),
        config_fingerprint: fingerprint,
    })
}

/// Loads the snapshot, warning when it was written under another config.
pub fn load_index(cfg: &PipelineConfig, snapshot: &Path) -> Result<Index> {
    if !snapshot.exists() {
        let msg = format!("index snapshot {} not found; run `kral ingest` first", snapshot.display());
        return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, msg)));
    }
    let header = Index::read_snapshot_header(snapshot)?;
    let fingerprint = cfg.fingerprint();
    if let Some(fp) = header.config_fingerprint.as_deref().filter(|fp| *fp != fingerprint) {
        tracing::warn!(snapshot = %snapshot.display(), written_with = fp, current = %fingerprint, "snapshot was built under a different config");
    }
    Index::load_snapshot(snapshot, provider_from_config(&cfg.embedding)?)
}

pub fn reward_kernel(cfg: &PipelineConfig) -> Result<RewardKernel> {
    RewardKernel::new(provider_from_config(&cfg.embedding)?, cfg.rewards.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prediction: String,
    pub reference: String,
    #[serde(default)]
    pub keywords: Option<Vec<String>>,
    #[serde(default)]
    pub gold_keywords: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    /// Present when both keyword lists were given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_reward: Option<f64>,
    pub hybrid: f64,
    pub repetition: f64,
    pub token_reward: f64,
}

pub fn score(kernel: &RewardKernel, req: &ScoreRequest) -> Result<ScoreResponse> {
    let TokenRewardBreakdown {
        hybrid,
        repetition,
        token_reward,
    } = kernel.token_reward_breakdown(&req.prediction, &req.reference)?;
    let action_reward = match (&req.keywords, &req.gold_keywords) {
        (Some(k), Some(g)) => Some(kernel.action_reward(k, g)?),
        (None, None) => None,
        _ => return Err(Error::Precondition("keywords and gold_keywords must be given together".into())),
    };
    Ok(ScoreResponse {
        action_reward,
        hybrid,
        repetition,
        token_reward,
    })
}

/// The remote scorer, if any configured avatar needs one.
pub fn remote_scorer(cfg: &PipelineConfig) -> Result<Option<Arc<RemoteTeacher>>> {
    if !cfg.evaluation.avatars.iter().any(|a| a.kind == AvatarKind::Remote) {
        return Ok(None);
    }
    if cfg.teacher.kind != TeacherKind::Remote {
        return Err(Error::InvalidConfig("remote avatars need teacher.kind: remote with an endpoint".into()));
    }
    Ok(Some(Arc::new(RemoteTeacher::new(&cfg.teacher)?)))
}

/// Scores items that arrive without avatar scores and recomputes the
/// aggregate of those that carry their own.
pub fn prepare_items(cfg: &PipelineConfig, items: &mut [EvalItem], remote: Option<&RemoteTeacher>) -> Result<()> {
    let (scored, unscored): (Vec<&mut EvalItem>, Vec<&mut EvalItem>) = items.iter_mut().partition(|i| !i.avatar_scores.is_empty());
    for item in scored {
        if let Some(x) = item.avatar_scores.iter().find(|x| !(1..=5).contains(*x)) {
            return Err(Error::Precondition(format!("item `{}`: avatar score {x} outside 1..=5", item.item_id)));
        }
        (item.median_score, item.score_std) = aggregate(&item.avatar_scores)?;
    }
    let mut pending: Vec<EvalItem> = unscored.iter().map(|i| (**i).clone()).collect();
    score_items(&mut pending, &cfg.evaluation.avatars, remote)?;
    for (dst, src) in unscored.into_iter().zip(pending) {
        *dst = src;
    }
    Ok(())
}

/// Synthetic items with known quality spread over the Likert range.
pub fn synthetic_items(n: usize, seed: u64) -> Vec<EvalItem> {
    (0..n)
        .map(|i| {
            let mut item = EvalItem::new(format!("item-{i:04}"), format!("synthetic case {i} (seed {seed})"), format!("synthetic plan {i}"));
            let u = kral_core::hashing::unit(kral_core::hashing::splitmix64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
            item.reference_quality = Some(1.0 + 4.0 * u);
            item
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_requires_both_keyword_lists() {
        let cfg = PipelineConfig::default();
        let k = reward_kernel(&cfg).unwrap();
        let mut req = ScoreRequest {
            prediction: "vancomycin 15 mg/kg".into(),
            reference: "vancomycin 15 mg/kg".into(),
            keywords: Some(vec!["sepsis".into()]),
            gold_keywords: None,
        };
        assert!(score(&k, &req).is_err());
        req.gold_keywords = Some(vec!["sepsis".into()]);
        let r = score(&k, &req).unwrap();
        assert_eq!(r.action_reward, Some(1.0));
        assert!(r.hybrid > 0.99);
    }

    #[test]
    fn given_scores_are_kept() {
        let cfg = PipelineConfig::default();
        let mut items = synthetic_items(3, 1);
        items[0].avatar_scores = vec![1, 1, 5, 5];
        prepare_items(&cfg, &mut items, None).unwrap();
        assert_eq!((items[0].median_score, items[0].score_std), (3.0, 2.0));
        assert_eq!(items[1].avatar_scores.len(), cfg.evaluation.avatars.len());
        items[2].avatar_scores = vec![7];
        assert!(prepare_items(&cfg, &mut items, None).is_err());
    }
}
