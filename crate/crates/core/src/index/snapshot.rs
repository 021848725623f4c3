//! Line-delimited JSON index snapshots.
//!
//! Line one is a [`SnapshotHeader`]; each following line holds one chunk and
//! its embedding. Floats are written with round-trip precision, so a loaded
//! index scores bit-identically to the one saved.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Index, RerankWeights};
use crate::corpus::ChunkRecord;
use crate::embedding::{EmbeddingProvider, EmbeddingProviderConfig, HybridEmbedding};
use crate::error::{Error, Result};

pub const SNAPSHOT_FORMAT: &str = "kral-index";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub embedding: EmbeddingProviderConfig,
    pub rerank: RerankWeights,
    pub chunks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    chunk: ChunkRecord,
    embedding: HybridEmbedding,
}

impl Index {
    /// Writes the index to `path`, replacing it atomically via a sibling temp file.
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_snapshot_stamped(path, None)
    }

    /// [`Index::save_snapshot`] recording the pipeline config fingerprint.
    pub fn save_snapshot_stamped(&self, path: impl AsRef<Path>, config_fingerprint: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let entries = self.entries_snapshot();
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            embedding: self.provider.config().clone(),
            rerank: self.rerank,
            chunks: entries.len(),
            config_fingerprint: config_fingerprint.map(str::to_string),
        };
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, &header)?;
            w.write_all(b"\n")?;
            for (chunk, embedding) in entries {
                serde_json::to_writer(&mut w, &Record { chunk, embedding })?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads only the header line of a snapshot.
    pub fn read_snapshot_header(path: impl AsRef<Path>) -> Result<SnapshotHeader> {
        let path = path.as_ref();
        let first = BufReader::new(File::open(path)?).lines().next().transpose()?.unwrap_or_default();
        serde_json::from_str(&first).map_err(|e| Error::CorruptSnapshot(format!("{}:1: {e}", path.display())))
    }

    /// Loads a snapshot. The provider must have the configuration the
    /// snapshot was built with; stored embeddings are used as-is.
    pub fn load_snapshot(path: impl AsRef<Path>, provider: Arc<dyn EmbeddingProvider>) -> Result<Index> {
        let path = path.as_ref();
        let corrupt = |line: usize, msg: String| Error::CorruptSnapshot(format!("{}:{line}: {msg}", path.display()));
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| corrupt(1, "missing header".into()))??;
        let header: SnapshotHeader = serde_json::from_str(&first).map_err(|e| corrupt(1, e.to_string()))?;
        if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
            return Err(corrupt(1, format!("unsupported format {} v{}", header.format, header.version)));
        }
        if provider.config() != &header.embedding {
            return Err(Error::InvalidConfig(format!(
                "snapshot {} was built with a different embedding configuration",
                path.display()
            )));
        }
        let mut prepared = Vec::with_capacity(header.chunks);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| corrupt(i + 2, e.to_string()))?;
            prepared.push((rec.chunk, rec.embedding));
        }
        if prepared.len() != header.chunks {
            return Err(corrupt(
                0,
                format!("header declares {} chunks, found {}", header.chunks, prepared.len()),
            ));
        }
        let index = Index::new(provider, header.rerank)?;
        index.insert_prepared(prepared)?;
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingProviderConfig, LocalProvider};
    use crate::index::RetrievalQuery;

    fn provider(seed: u64) -> Arc<dyn EmbeddingProvider> {
        Arc::new(LocalProvider::new(EmbeddingProviderConfig::local(seed)).unwrap())
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let idx = Index::new(provider(3), RerankWeights::default()).unwrap();
        let chunks = (0..20)
            .map(|i| ChunkRecord::from_text(format!("c{i}"), "d", format!("dose {i} mg of agent{} q{}h", i % 7, i % 4 + 6)))
            .collect();
        idx.upsert(chunks).unwrap();
        idx.record_hit("c4", 0.377, 0.1).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        idx.save_snapshot_stamped(&path, Some("abc123")).unwrap();
        assert_eq!(Index::read_snapshot_header(&path).unwrap().config_fingerprint.as_deref(), Some("abc123"));
        let loaded = Index::load_snapshot(&path, provider(3)).unwrap();

        assert_eq!(loaded.chunks(), idx.chunks());
        let q = RetrievalQuery::new("agent3 dose q8h").with_top_k(20).with_threshold(0.0);
        let a = idx.search_hybrid(&q).unwrap();
        let b = loaded.search_hybrid(&q).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.chunk_id, y.chunk_id);
            assert_eq!(x.r_s.to_bits(), y.r_s.to_bits());
            assert_eq!(x.r_p.to_bits(), y.r_p.to_bits());
        }
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"format\":\"other\"}\n").unwrap();
        assert!(matches!(Index::load_snapshot(&path, provider(1)), Err(Error::CorruptSnapshot(_))));

        let idx = Index::new(provider(1), RerankWeights::default()).unwrap();
        idx.upsert(vec![ChunkRecord::from_text("a", "d", "text")]).unwrap();
        idx.save_snapshot(&path).unwrap();
        assert!(matches!(Index::load_snapshot(&path, provider(2)), Err(Error::InvalidConfig(_))));

        let mut content = std::fs::read_to_string(&path).unwrap();
        content.push_str("{not json\n");
        std::fs::write(&path, content).unwrap();
        assert!(matches!(Index::load_snapshot(&path, provider(1)), Err(Error::CorruptSnapshot(_))));
    }
}
