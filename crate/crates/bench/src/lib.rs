//! Fixtures shared by the benchmarks.

use kral_core::embedding::{provider_from_config, EmbeddingProviderConfig};
use kral_core::index::bench::{planted_needles, NeedleConfig};
use kral_core::index::{Index, RerankWeights};
use kral_core::rewards::{RewardKernel, RewardParams};

/// The planted-needle index and its query texts.
pub fn needle_index(queries: usize) -> (Index, Vec<String>) {
    let suite = planted_needles(&NeedleConfig {
        queries,
        ..NeedleConfig::default()
    });
    let provider = provider_from_config(&EmbeddingProviderConfig::default()).expect("local provider");
    let index = Index::new(provider, RerankWeights::default()).expect("index");
    index.upsert(suite.chunks).expect("upsert");
    (index, suite.queries.into_iter().map(|q| q.query).collect())
}

pub fn reward_kernel() -> RewardKernel {
    let provider = provider_from_config(&EmbeddingProviderConfig::default()).expect("local provider");
    RewardKernel::new(provider, RewardParams::default()).expect("kernel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        let (index, queries) = needle_index(5);
        assert_eq!(queries.len(), 5);
        assert!(index.len() > 5);
        assert!(reward_kernel().token_reward("a b", "a b").unwrap() > 0.9);
    }
}
