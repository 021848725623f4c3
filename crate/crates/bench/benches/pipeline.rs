use criterion::{black_box, criterion_group, criterion_main, Criterion};
use kral_bench::{needle_index, reward_kernel};
use kral_core::corpus::Timestamp;
use kral_core::grpo::{make_env, train, GrpoConfig};
use kral_core::index::{QueryCache, RetrievalQuery};

fn retrieval(c: &mut Criterion) {
    let (index, queries) = needle_index(200);
    let queries: Vec<RetrievalQuery> = queries.into_iter().map(RetrievalQuery::new).collect();
    let now = Timestamp(1_700_000_000);

    let mut i = 0;
    c.bench_function("hybrid_search", |b| {
        b.iter(|| {
            i = (i + 1) % queries.len();
            black_box(index.search_reranked(&queries[i], now).unwrap())
        })
    });

    let cache = QueryCache::new(1000);
    for q in &queries {
        index.cached_search(q, &cache, now).unwrap();
    }
    let mut i = 0;
    c.bench_function("cached_search_warm", |b| {
        b.iter(|| {
            i = (i + 1) % queries.len();
            black_box(index.cached_search(&queries[i], &cache, now).unwrap())
        })
    });
}

fn rewards(c: &mut Criterion) {
    let kernel = reward_kernel();
    let prediction = "Give vancomycin 15 mg/kg every 12 hours and monitor renal function; review cultures at 48 hours.";
    let reference = "Vancomycin 15-20 mg/kg every 8-12 hours, adjusted to renal function and trough levels.";
    c.bench_function("token_reward", |b| b.iter(|| black_box(kernel.token_reward(prediction, reference).unwrap())));
    let predicted: Vec<String> = ["covid", "renal", "sepsis"].map(String::from).to_vec();
    let gold: Vec<String> = ["covid-19", "renal-failure", "sepsis"].map(String::from).to_vec();
    c.bench_function("action_reward", |b| b.iter(|| black_box(kernel.action_reward(&predicted, &gold).unwrap())));
}

fn grpo(c: &mut Criterion) {
    let env = make_env(42, 20).unwrap();
    let cfg = GrpoConfig {
        steps: 1,
        ..GrpoConfig::default()
    };
    c.bench_function("grpo_step", |b| b.iter(|| black_box(train(&env, &cfg).unwrap())));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = retrieval, rewards, grpo
}
criterion_main!(benches);
