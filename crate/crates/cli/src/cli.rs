//! Command-line interface.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kral_core::corpus::Timestamp;
use kral_core::distill::{
    answer_to_question, augment_queries, preprocess_trajectory, react_trajectory, read_jsonl, screen_pairs, teacher_from_config, write_jsonl, CaseRecord,
    Groundedness, PairFilter, PreprocessConfig, QAPair, ReactConfig, DEFAULT_AUGMENTATION, DEFAULT_GROUNDEDNESS,
};
use kral_core::evaluate::{run_protocol, EchoHumans, EvalItem, HumanSource, RandomHumans, SessionStore};
use kral_core::grpo::{ablate, make_env, train, AblationFactor, GrpoConfig, LearningCurve, ABLATION_SEEDS};
use kral_core::index::bench::{bench_latency, bench_nih, planted_needles, NeedleConfig, NeedleQuery};
use kral_core::index::{Index, QueryCache, RerankWeights};
use kral_core::resources::{estimate_resources, ResourceFactors, Technique};
use kral_core::{load_config, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::app;
use crate::error::{CliError, CliResult};
use crate::server::{self, AppState};

/// Smoothing window for the curve summaries.
pub const SUMMARY_WINDOW: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "kral", version, about = "Retrieval, reward scoring, GRPO training and review sessions")]
pub struct Cli {
    /// Pipeline config (YAML); defaults apply when omitted.
    #[arg(long, global = true, env = "KRAL_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides the training, evaluation and teacher seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Root for the index snapshot, session journals and run outputs.
    #[arg(long, global = true, env = "KRAL_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk and embed a corpus into an index snapshot.
    Ingest(IngestArgs),
    /// Search the index snapshot.
    Query(QueryArgs),
    /// Generate QA pairs and trajectories from the indexed chunks and cases.
    Distill(DistillArgs),
    /// Train the toy policy and write its learning curve.
    Train(TrainArgs),
    /// Train base and ablated arms over the fixed seeds.
    Ablate(AblateArgs),
    /// Create a review session and drive it with simulated humans.
    Eval(EvalArgs),
    /// Needle-in-a-haystack retrieval benchmark.
    BenchNih(BenchArgs),
    /// Unoptimized, cold-cache and warm-cache query latency.
    BenchLatency(BenchArgs),
    /// Training FLOPs and VRAM factors of the efficiency techniques.
    Estimate(EstimateArgs),
    /// Print the effective config and its fingerprint.
    Config,
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus files (JSON lines); defaults to corpus.paths.
    #[arg(long = "corpus")]
    pub corpus: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub text: String,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Print hits as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Case records (JSON lines) for trajectory generation.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Output directory; defaults to `<data-dir>/distill`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Paraphrases per seed question.
    #[arg(long, default_value_t = DEFAULT_AUGMENTATION)]
    pub augment: usize,
    /// Use at most this many chunks as QA seeds.
    #[arg(long)]
    pub max_chunks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = server::DEFAULT_TRAIN_CASES)]
    pub cases: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Withhold retrieved evidence from the answer step.
    #[arg(long)]
    pub no_retrieval: bool,
    /// Curve file; defaults to `<data-dir>/runs/train-seed<seed>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FactorArg {
    ClipHigher,
    RewardSmoothing,
    SubwordJaccard,
    RepetitionPenalty,
}

impl From<FactorArg> for AblationFactor {
    fn from(f: FactorArg) -> Self {
        match f {
            FactorArg::ClipHigher => AblationFactor::ClipHigher,
            FactorArg::RewardSmoothing => AblationFactor::RewardSmoothing,
            FactorArg::SubwordJaccard => AblationFactor::SubwordJaccard,
            FactorArg::RepetitionPenalty => AblationFactor::RepetitionPenalty,
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Factors to ablate; all when omitted.
    #[arg(long = "factor", value_enum)]
    pub factors: Vec<FactorArg>,
    #[arg(long, default_value_t = server::DEFAULT_TRAIN_CASES)]
    pub cases: usize,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HumansArg {
    /// Repeat the rounded avatar median.
    Echo,
    /// Score uniformly at random.
    Random,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Items (JSON lines with item_id, case_text, therapy_text).
    #[arg(long, conflicts_with = "synthetic")]
    pub items: Option<PathBuf>,
    /// Generate this many synthetic items instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, value_enum, default_value_t = HumansArg::Echo)]
    pub humans: HumansArg,
    /// Simulated reviewers; defaults to reviewers_per_item.
    #[arg(long)]
    pub reviewers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Techniques to enable (lora, crm, fp8, offload); all when omitted.
    #[arg(long = "enable", value_delimiter = ',')]
    pub enable: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides service.bind.
    #[arg(long)]
    pub bind: Option<String>,
}

/// Loaded config plus the resolved data directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: PipelineConfig,
    pub data_dir: PathBuf,
}

impl Context {
    pub fn load(cli: &Cli) -> CliResult<Self> {
        let mut cfg = match &cli.config {
            Some(path) => load_config(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.grpo.seed = seed;
            cfg.evaluation.session.seed = seed;
            cfg.teacher.seed = seed;
        }
        cfg.validate()?;
        let data_dir = app::resolve_data_dir(cli.data_dir.as_deref(), &cfg);
        Ok(Context { cfg, data_dir })
    }

    pub fn fingerprint(&self) -> String {
        self.cfg.fingerprint()
    }

    pub fn snapshot(&self) -> PathBuf {
        app::snapshot_path(&self.data_dir)
    }
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let ctx = Context::load(&cli)?;
    tracing::debug!(config = %ctx.cfg.echo(), fingerprint = %ctx.fingerprint(), "effective config");
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a, out),
        Command::Query(a) => query(&ctx, a, out),
        Command::Distill(a) => distill(&ctx, a, out),
        Command::Train(a) => train_cmd(&ctx, a, out),
        Command::Ablate(a) => ablate_cmd(&ctx, a, out),
        Command::Eval(a) => eval(&ctx, a, out),
        Command::BenchNih(a) => bench_nih_cmd(a, out),
        Command::BenchLatency(a) => bench_latency_cmd(a, out),
        Command::Estimate(a) => estimate(a, out),
        Command::Config => {
            write!(out, "{}", ctx.cfg.echo())?;
            writeln!(out, "# fingerprint: {}", ctx.fingerprint())?;
            Ok(())
        }
        Command::Serve(a) => serve(ctx, a),
    }
}

fn ingest(ctx: &Context, a: IngestArgs, out: &mut dyn Write) -> CliResult<()> {
    let paths = if a.corpus.is_empty() { ctx.cfg.corpus.paths.clone() } else { a.corpus };
    let s = app::ingest(&ctx.cfg, &paths, &ctx.snapshot())?;
    writeln!(out, "ingested documents={} chunks={} snapshot={}", s.documents, s.chunks, s.snapshot.display())?;
    writeln!(out, "config_fingerprint={}", s.config_fingerprint)?;
    Ok(())
}

fn query(ctx: &Context, a: QueryArgs, out: &mut dyn Write) -> CliResult<()> {
    let index = app::load_index(&ctx.cfg, &ctx.snapshot())?;
    let mut q = ctx.cfg.retrieval.query(a.text);
    if let Some(k) = a.top_k {
        q.top_k = k;
    }
    let cache = QueryCache::new(ctx.cfg.retrieval.cache_capacity);
    let (hits, _) = index.cached_search(&q, &cache, Timestamp::now())?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&hits)?)?;
        return Ok(());
    }
    if hits.is_empty() {
        writeln!(out, "no hits above threshold {}", q.filter_threshold)?;
    }
    for (i, h) in hits.iter().enumerate() {
        writeln!(out, "{}. {} r_rank={:.4} r_s={:.4} r_p={:.4} r_t={:.4}", i + 1, h.chunk_id, h.r_rank, h.r_s, h.r_p, h.r_t)?;
        writeln!(out, "   {}", h.text.split_whitespace().collect::<Vec<_>>().join(" "))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillManifest {
    pub config_fingerprint: String,
    pub seed_chunks: usize,
    pub qa_pairs: usize,
    pub augmented_pairs: usize,
    pub augmentation_shortfall: usize,
    pub rejected_pairs: usize,
    pub cases: usize,
    pub valid_trajectories: usize,
}

fn distill(ctx: &Context, a: DistillArgs, out: &mut dyn Write) -> CliResult<()> {
    let index = app::load_index(&ctx.cfg, &ctx.snapshot())?;
    let teacher = teacher_from_config(&ctx.cfg.teacher)?;
    let dir = a.out.unwrap_or_else(|| ctx.data_dir.join("distill"));
    std::fs::create_dir_all(&dir)?;

    let mut chunks = index.chunks();
    chunks.sort_by(|x, y| x.chunk_id.cmp(&y.chunk_id));
    if let Some(n) = a.max_chunks {
        chunks.truncate(n);
    }
    let mut candidates: Vec<(QAPair, Option<&str>)> = Vec::new();
    let (mut seeds, mut augmented, mut shortfall) = (0, 0, 0);
    for chunk in &chunks {
        let qa = answer_to_question(chunk, teacher.as_ref())?;
        seeds += 1;
        let aug = if a.augment > 0 { Some(augment_queries(&qa, a.augment, teacher.as_ref())?) } else { None };
        candidates.push((qa, Some(chunk.text.as_str())));
        if let Some(aug) = aug {
            augmented += aug.pairs.len();
            shortfall += aug.shortfall;
            candidates.extend(aug.pairs.into_iter().map(|p| (p, Some(chunk.text.as_str()))));
        }
    }
    let total = candidates.len();
    let filter = Groundedness(DEFAULT_GROUNDEDNESS);
    let filters: [&dyn PairFilter; 1] = [&filter];
    let pairs = screen_pairs(candidates, &filters);
    write_jsonl(dir.join("qa.jsonl"), &pairs)?;

    let cases: Vec<CaseRecord> = match &a.cases {
        Some(path) => read_jsonl(path)?,
        None => Vec::new(),
    };
    let cache = QueryCache::new(ctx.cfg.retrieval.cache_capacity);
    let kernel = app::reward_kernel(&ctx.cfg)?;
    let react = ReactConfig {
        query: ctx.cfg.retrieval.query(""),
        ..ReactConfig::default()
    };
    let mut trajectories = Vec::new();
    for case in &cases {
        let t = react_trajectory(case, teacher.as_ref(), &index, &cache, &kernel, &react)?;
        if t.valid {
            trajectories.push(preprocess_trajectory(&t, &PreprocessConfig::default())?);
        } else {
            tracing::info!(case = %case.case_id, "trajectory hit the round limit; dropped");
        }
    }
    write_jsonl(dir.join("trajectories.jsonl"), &trajectories)?;

    let manifest = DistillManifest {
        config_fingerprint: ctx.fingerprint(),
        seed_chunks: seeds,
        qa_pairs: pairs.len(),
        augmented_pairs: augmented,
        augmentation_shortfall: shortfall,
        rejected_pairs: total - pairs.len(),
        cases: cases.len(),
        valid_trajectories: trajectories.len(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    writeln!(
        out,
        "distilled qa_pairs={} rejected={} trajectories={}/{} out={}",
        manifest.qa_pairs,
        manifest.rejected_pairs,
        manifest.valid_trajectories,
        manifest.cases,
        dir.display()
    )?;
    Ok(())
}

/// The curve file written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFile {
    pub config_fingerprint: String,
    pub cases: usize,
    pub config: GrpoConfig,
    pub initial_smoothed: f64,
    pub final_smoothed: f64,
    pub curve: LearningCurve,
}

fn grpo_config(ctx: &Context, steps: Option<usize>) -> CliResult<GrpoConfig> {
    let mut cfg = ctx.cfg.grpo.clone();
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(ctx: &Context, a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = grpo_config(ctx, a.steps)?;
    if a.no_retrieval {
        cfg.retrieval = false;
    }
    let env = make_env(cfg.seed, a.cases)?;
    let outcome = train(&env, &cfg)?;
    let curve = outcome.curve;
    let file = CurveFile {
        config_fingerprint: ctx.fingerprint(),
        cases: a.cases,
        initial_smoothed: curve.initial_smoothed(SUMMARY_WINDOW),
        final_smoothed: curve.final_smoothed(SUMMARY_WINDOW),
        config: cfg,
        curve,
    };
    let path = a.out.unwrap_or_else(|| ctx.data_dir.join("runs").join(format!("train-seed{}.json", file.config.seed)));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")?;
    let ratio = file.final_smoothed / file.initial_smoothed;
    writeln!(
        out,
        "train seed={} steps={} initial={:.6} final={:.6} ratio={ratio:.3} curve={}",
        file.config.seed,
        file.curve.steps.len(),
        file.initial_smoothed,
        file.final_smoothed,
        path.display()
    )?;
    Ok(())
}

fn ablate_cmd(ctx: &Context, a: AblateArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = grpo_config(ctx, a.steps)?;
    let factors: Vec<AblationFactor> = if a.factors.is_empty() { AblationFactor::ALL.to_vec() } else { a.factors.into_iter().map(Into::into).collect() };
    for factor in factors {
        // Each seed trains on its own environment, matching `train --seed`.
        let mut lines = String::new();
        for &seed in &ABLATION_SEEDS {
            let env = make_env(seed, a.cases)?;
            let report = ablate(&env, &cfg, factor, &[seed])?;
            lines.push_str(&format!(
                "ablation factor={} seed={seed} base={:.6} ablated={:.6}\n",
                factor.name(),
                report.base.final_metric[0],
                report.ablated.final_metric[0]
            ));
        }
        write!(out, "{lines}")?;
    }
    Ok(())
}

fn humans(kind: HumansArg, n: usize, seed: u64) -> Box<dyn HumanSource> {
    match kind {
        HumansArg::Echo => Box::new(EchoHumans::new(n)),
        HumansArg::Random => Box::new(RandomHumans::new(n, seed)),
    }
}

fn eval(ctx: &Context, a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut items: Vec<EvalItem> = match (&a.items, a.synthetic) {
        (Some(path), _) => read_jsonl(path)?,
        (None, Some(n)) => app::synthetic_items(n, ctx.cfg.evaluation.session.seed),
        (None, None) => return Err(CliError::Usage("eval needs --items PATH or --synthetic N".into())),
    };
    let remote = app::remote_scorer(&ctx.cfg)?;
    app::prepare_items(&ctx.cfg, &mut items, remote.as_deref())?;
    let store = SessionStore::open(app::sessions_dir(&ctx.data_dir))?.with_fingerprint(ctx.fingerprint());
    let session = store.create(items, ctx.cfg.evaluation.session.clone())?;
    let id = session.session_id.clone();
    let n = a.reviewers.unwrap_or(ctx.cfg.evaluation.session.reviewers_per_item);
    let mut source = humans(a.humans, n, ctx.cfg.evaluation.session.seed);
    store.update(&id, |s| run_protocol(s, source.as_mut()))?;
    let session = store.get(&id)?;
    writeln!(out, "session={id} status={} round={}", serde_json::to_value(session.status)?.as_str().unwrap_or("?"), session.round)?;
    for (stratum, st) in &session.strata {
        let kappa = session.kappa_by_stratum.get(stratum).map_or("n/a".to_string(), |k| format!("{k:.4}"));
        writeln!(
            out,
            "stratum={stratum} items={} rounds={} status={} kappa={kappa}",
            st.item_ids.len(),
            st.round,
            serde_json::to_value(st.status)?.as_str().unwrap_or("?")
        )?;
    }
    Ok(())
}

fn needle_index(queries: usize) -> CliResult<(Index, Vec<NeedleQuery>)> {
    if queries == 0 {
        return Err(CliError::Usage("--queries must be >= 1".into()));
    }
    let suite = planted_needles(&NeedleConfig {
        queries,
        ..NeedleConfig::default()
    });
    let provider = kral_core::embedding::provider_from_config(&kral_core::embedding::EmbeddingProviderConfig::default())?;
    let index = Index::new(provider, RerankWeights::default())?;
    index.upsert(suite.chunks)?;
    Ok((index, suite.queries))
}

fn bench_nih_cmd(a: BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    let (index, queries) = needle_index(a.queries)?;
    let report = bench_nih(&index, &queries)?;
    write!(out, "{}", report.to_table())?;
    Ok(())
}

fn bench_latency_cmd(a: BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    let (index, queries) = needle_index(a.queries)?;
    let texts: Vec<String> = queries.into_iter().map(|q| q.query).collect();
    let report = bench_latency(&index, &texts)?;
    write!(out, "{}", report.to_table())?;
    Ok(())
}

pub fn parse_techniques(names: &[String]) -> kral_core::Result<BTreeSet<Technique>> {
    if names.is_empty() {
        return Ok(Technique::ALL.into_iter().collect());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn estimate(a: EstimateArgs, out: &mut dyn Write) -> CliResult<()> {
    let enabled = parse_techniques(&a.enable)?;
    let factors = ResourceFactors::default();
    factors.validate()?;
    let e = estimate_resources(&factors, &enabled);
    let names: Vec<&str> = enabled.iter().map(|t| t.as_str()).collect();
    writeln!(out, "enabled={}", names.join(","))?;
    writeln!(out, "flops_factor={:.4} ({:.1}x reduction)", e.flops_factor, e.flops_reduction())?;
    writeln!(out, "vram_factor={:.4} ({:.1}x reduction)", e.vram_factor, e.vram_reduction())?;
    Ok(())
}

fn serve(ctx: Context, a: ServeArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg;
    if let Some(bind) = a.bind {
        cfg.service.bind = bind;
    }
    let state = AppState::open(cfg, &ctx.data_dir)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(state))
}
